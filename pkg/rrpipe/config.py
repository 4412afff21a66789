import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULTS = {
    "BM25_K1": 1.2,
    "BM25_B": 0.75,
    "REMOVE_STOPWORDS": True,
    "STEM": False,
    "PRICE_TABLE": None,
    "MAX_IN_FLIGHT": 8,
    "QUERY_CONCURRENCY": 4,
    "MAX_RETRIES": 3,
    "RETRY_BACKOFF": (1, 2, 4),
    "REQUEST_TIMEOUT": 120,
    "MAX_WINDOW": 50,
    "MAX_PASSAGE_TOKENS": 300,
    "LOGFILE": None,
    "USAGE_LEDGER": None,
    "SCRIPT_FILE": None,
    "TRANSCRIPT_FILE": None,
    "RECORD_TRANSCRIPT": None,
    "GEMINI_API_BASE": None,
}

# command line flags that override a setting of the same meaning
FLAG_SETTINGS = {
    "price_table": "PRICE_TABLE",
    "script_file": "SCRIPT_FILE",
    "transcript_file": "TRANSCRIPT_FILE",
    "record_transcript": "RECORD_TRANSCRIPT",
    "usage_ledger": "USAGE_LEDGER",
    "concurrency": "QUERY_CONCURRENCY",
    "k1": "BM25_K1",
    "b": "BM25_B",
}


def get_config_file(env, filename="rrpipe_config.py"):
    """Lookup possible config file locations.

    We do this so we can centrally configure an installation w/o needing users
    to have specific environment variables set. The current directory is never
    searched: every path the toolkit reads is explicit.
    """
    lookup = [
        # explicit env var
        Path(env.get("RRPIPE_CONFIG", "doesnotexist.rrpipe")),
        # explicit virtualenv directory
        Path(env.get("VIRTUAL_ENV", "doesnotexist.rrpipe")) / filename,
        # implicit virtualenv directory, assuming argv[0] is the entrypoint in
        # $VIRTUALENV/bin/rrpipe
        Path(sys.executable).parent.parent / filename,
        # system install
        Path("/etc/rrpipe") / filename,
    ]

    for path in lookup:
        if path.exists():
            return path


def get_config(env=os.environ, path=None):
    config = {}
    config_file = Path(path) if path else get_config_file(env)
    if config_file:
        logger.debug("Reading settings from %s", config_file)
        exec(config_file.read_text(), {}, config)
    return config


def load_config(options, env=os.environ):
    """Defaults, overlaid by the settings file, overlaid by command line flags."""
    settings_path = getattr(options, "settings", None)
    if settings_path and not Path(settings_path).exists():
        sys.exit(f"Settings file does not exist: {settings_path}")

    cfg = dict(DEFAULTS)
    cfg.update(
        (k, v) for k, v in get_config(env, settings_path).items() if k.isupper()
    )
    for flag, setting in FLAG_SETTINGS.items():
        value = getattr(options, flag, None)
        if value is not None:
            cfg[setting] = value
    if getattr(options, "no_stopwords", False):
        cfg["REMOVE_STOPWORDS"] = False
    if getattr(options, "stem", False):
        cfg["STEM"] = True
    return cfg


def api_key_name(provider_id):
    return "RRPIPE_API_KEY_" + provider_id.upper().replace(":", "_").replace("-", "_")


def get_api_key(provider_id, cfg, env=os.environ):
    """Credentials come from the environment or the settings file only."""
    name = api_key_name(provider_id)
    return env.get(name) or cfg.get(name)


def api_keys(cfg, env=os.environ):
    """Every configured credential, for log redaction."""
    keys = [v for k, v in env.items() if k.startswith("RRPIPE_API_KEY_") and v]
    keys.extend(v for k, v in cfg.items() if k.startswith("RRPIPE_API_KEY_") and v)
    return keys
