"""Ablation sweeps over a grid of pipeline configurations.

Records are persisted one file per configuration, named by config hash, with a
manifest listing them in grid order, so an interrupted sweep resumes by
skipping what is already done.
"""
import json
import logging
import os
from pathlib import Path

from pydantic import ValidationError

from rrpipe.index import build_index
from rrpipe.pipeline import config_hash, config_variants, run_config, toolkit_version
from rrpipe.schema import ManifestEntry, RunManifest, RunRecord, SweepGrid

logger = logging.getLogger(__name__)


class InvalidGrid(Exception):
    pass


class RunStoreError(Exception):
    pass


def load_grid(path):
    path = Path(path)
    if not path.exists():
        raise InvalidGrid(f"Grid file does not exist: {path}")
    try:
        grid = SweepGrid.parse_obj(json.loads(path.read_text(encoding="utf8")))
        return grid.expand()
    except (json.JSONDecodeError, ValidationError) as exc:
        raise InvalidGrid(f"Invalid grid {path} - {exc}")


def _write_atomic(path, text):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf8")
    os.replace(tmp, path)


class RunStore:
    def __init__(self, path):
        self.path = Path(path)
        self.manifest_path = self.path / "manifest.json"

    def record_path(self, config_hash):
        return self.path / f"{config_hash}.json"

    def load_manifest(self):
        if not self.manifest_path.exists():
            return RunManifest(toolkit_version=toolkit_version())
        try:
            return RunManifest.parse_file(self.manifest_path)
        except ValueError as exc:  # bad JSON or a failed validation
            raise RunStoreError(f"Could not load {self.manifest_path} - {exc}")

    def save_manifest(self, manifest):
        self.path.mkdir(parents=True, exist_ok=True)
        _write_atomic(self.manifest_path, manifest.json(indent=2) + "\n")

    def load_record(self, config_hash):
        """The stored record, or None if it is missing or unreadable."""
        path = self.record_path(config_hash)
        if not path.exists():
            return None
        try:
            return RunRecord.parse_file(path)
        except ValueError as exc:  # bad JSON or a failed validation
            logger.warning("Ignoring invalid run record %s: %s", path, exc)
            return None

    def save_record(self, record):
        self.path.mkdir(parents=True, exist_ok=True)
        path = self.record_path(record.config_hash)
        _write_atomic(path, record.json(indent=2) + "\n")
        return path

    def records(self):
        manifest = self.load_manifest()
        records = []
        for entry in manifest.entries:
            if entry.status != "done":
                continue
            record = self.load_record(entry.config_hash)
            if record is not None:
                records.append(record)
        return records


def _with_entry(manifest, entry):
    entries = list(manifest.entries)
    for position, existing in enumerate(entries):
        if existing.config_hash == entry.config_hash:
            entries[position] = entry
            break
    else:
        entries.append(entry)
    return manifest.copy(update={"entries": entries})


def run_sweep(
    grid,
    queries,
    corpus,
    qrels,
    gateway,
    store,
    resume=False,
    index=None,
    analyzer=None,
    concurrency=4,
    max_window=50,
    command=None,
):
    """Run every config of the grid, one RunRecord each.

    A failing config is recorded in the manifest and skipped; the sweep carries on.
    """
    if not grid:
        raise InvalidGrid("The grid is empty")
    for config in grid:
        for name in config_variants(config):
            gateway.price_table[name]

    if index is None:
        kwargs = {"analyzer": analyzer} if analyzer else {}
        index = build_index(corpus, **kwargs)

    if resume:
        manifest = store.load_manifest()
    else:
        manifest = RunManifest(toolkit_version=toolkit_version())

    records = []
    for position, config in enumerate(grid, start=1):
        key = config_hash(config)
        if resume:
            entry = manifest.get(key)
            existing = None
            if entry and entry.status == "done":
                existing = store.load_record(key)
            if existing is not None:
                logger.info("[%s/%s] %s already complete", position, len(grid), key)
                records.append(existing)
                continue

        logger.info(
            "[%s/%s] %s qe=%s rr=%s k=%s",
            position,
            len(grid),
            key,
            config.qe_variant,
            config.rr_variant,
            config.k,
        )
        try:
            record = run_config(
                config,
                queries,
                index,
                qrels,
                gateway,
                corpus,
                concurrency=concurrency,
                max_window=max_window,
                command=command,
            )
        except Exception as exc:
            logger.warning("Config %s failed: %s", key, exc)
            logger.debug(f"{exc}", exc_info=True)
            manifest = _with_entry(
                manifest,
                ManifestEntry(config_hash=key, status="failed", error=str(exc)),
            )
            store.save_manifest(manifest)
            continue

        path = store.save_record(record)
        manifest = _with_entry(
            manifest, ManifestEntry(config_hash=key, status="done", record=path.name)
        )
        store.save_manifest(manifest)
        records.append(record)

    return records
