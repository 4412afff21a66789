"""One door to every text-generation provider.

The gateway checks the prompt fits the model, takes a per-provider in-flight
slot, retries transient failures, and turns whatever the provider reports into
a UsageRecord that the cost ledger can price.
"""
import csv
import hashlib
import json
import logging
import threading
import time
from contextlib import contextmanager
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import List, Optional

import requests
from pydantic import ValidationError

from rrpipe import config
from rrpipe.schema import ModelVariant, Record, Stage, Thinking, UsageRecord

logger = logging.getLogger(__name__)

GEMINI_API_BASE = "https://generativelanguage.googleapis.com/v1beta"
MICRO = Decimal(1_000_000)
DOLLARS = Decimal("0.000001")
TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class GatewayError(Exception):
    pass


class ProviderUnavailable(GatewayError):
    pass


class TransientError(GatewayError):
    """Raised by providers for failures worth retrying."""


class ContextOverflow(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class UnknownVariant(GatewayError):
    pass


class ProviderNotConfigured(GatewayError):
    pass


class PriceTableError(GatewayError):
    pass


def estimate_tokens(text):
    """ceil(utf8 bytes / 4), for providers that do not report usage."""
    return -(-len(text.encode("utf8")) // 4)


def prompt_hash(prompt):
    return hashlib.sha256(prompt.encode("utf8")).hexdigest()


class PriceTable:
    def __init__(self, variants):
        self._variants = {}
        for variant in variants:
            if variant.name in self._variants:
                raise PriceTableError(f"Duplicate variant {variant.name!r}")
            self._variants[variant.name] = variant

    def __getitem__(self, name):
        try:
            return self._variants[name]
        except KeyError:
            raise UnknownVariant(f"Variant {name!r} is not in the price table")

    def __contains__(self, name):
        return name in self._variants

    def __iter__(self):
        return iter(self._variants.values())

    def __len__(self):
        return len(self._variants)


def load_price_table(path):
    """Read the variants CSV.

    Header: name,provider_id,thinking,price_in,price_out,max_context_tokens[,model]
    """
    path = Path(path)
    if not path.exists():
        raise PriceTableError(f"Price table does not exist: {path}")
    variants = []
    with path.open(encoding="utf8", newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            values = {k.strip(): v.strip() for k, v in row.items() if k and v}
            try:
                variants.append(ModelVariant.parse_obj(values))
            except ValidationError as exc:
                raise PriceTableError(f"{path}:{reader.line_num}: {exc}")
    return PriceTable(variants)


def cost_micros(usage, table):
    """Exact cost rounded half-even to whole micro-dollars.

    A price per 1e6 tokens in dollars is a price per token in micro-dollars.
    """
    variant = table[usage.variant_name]
    exact = (
        usage.input_tokens * variant.price_in
        + usage.output_tokens * variant.price_out
    )
    return int(exact.to_integral_value(rounding=ROUND_HALF_EVEN))


def micros_to_dollars(micros):
    return (Decimal(micros) / MICRO).quantize(DOLLARS)


def cost_of(usage, table):
    return micros_to_dollars(cost_micros(usage, table))


def total_cost(usages, table):
    return micros_to_dollars(sum(cost_micros(u, table) for u in usages))


class GenerationRequest(Record):
    prompt: str
    stage: Stage
    query_id: str
    candidate_ids: List[str] = []
    seed: int = 0


class Completion(Record):
    text: str
    input_tokens: Optional[int] = None
    output_tokens: Optional[int] = None
    latency: Optional[float] = None


class TranscriptEntry(Record):
    prompt_hash: str
    completion: str
    input_tokens: int
    output_tokens: int
    latency: float


class JsonlLog:
    """Append-only JSON lines file, safe for concurrent writers."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record):
        line = record.json() + "\n"
        with self._lock:
            with self.path.open("a", encoding="utf8") as f:
                f.write(line)


class UsageCollector:
    def __init__(self, ledger_path=None):
        self._records = []
        self._lock = threading.Lock()
        self._ledger = JsonlLog(ledger_path) if ledger_path else None

    def add(self, usage):
        with self._lock:
            self._records.append(usage)
        if self._ledger:
            self._ledger.append(usage)

    @property
    def records(self):
        with self._lock:
            return list(self._records)


class Provider:
    deterministic = False

    def count_tokens(self, variant, text):
        """Provider tokenizer count, or None to fall back to the estimator."""
        return None

    def complete(self, variant, request):
        raise NotImplementedError


class GeminiProvider(Provider):
    def __init__(self, api_key, api_base=GEMINI_API_BASE, timeout=120, session=None):
        self.api_key = api_key
        self.api_base = api_base.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, variant, request):
        url = f"{self.api_base}/models/{variant.model_id}:generateContent"
        thinking_budget = 0 if variant.thinking == Thinking.OFF else -1
        payload = {
            "contents": [{"role": "user", "parts": [{"text": request.prompt}]}],
            "generationConfig": {
                "seed": request.seed,
                "thinkingConfig": {"thinkingBudget": thinking_budget},
            },
        }
        logger.debug("POST %s (%s prompt bytes)", url, len(request.prompt))
        try:
            response = self.session.post(
                url,
                headers={
                    "x-goog-api-key": self.api_key,
                    "Content-Type": "application/json",
                },
                json=payload,
                timeout=self.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientError(f"{url}: {exc}")

        if response.status_code == 200:
            try:
                return self._parse(response.json())
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise ProviderUnavailable(f"Unreadable response from {url}: {exc}")

        # try get more helpful error message
        detail = response.text
        try:
            detail = response.json()["error"]["message"]
        except Exception:
            pass

        if response.status_code in (401, 403):
            raise AuthError(f"Error: {response.status_code} from {url}: {detail}")
        if response.status_code in TRANSIENT_STATUS:
            raise TransientError(f"Error: {response.status_code} from {url}: {detail}")
        raise ProviderUnavailable(
            f"Error: {response.status_code} from {url}: {detail}"
        )

    def _parse(self, body):
        candidates = body.get("candidates") or []
        if not candidates:
            raise ProviderUnavailable(f"No candidates in response: {body}")
        parts = candidates[0].get("content", {}).get("parts", [])
        text = "".join(p.get("text", "") for p in parts if not p.get("thought"))
        usage = body.get("usageMetadata")
        if not usage:
            return Completion(text=text)
        return Completion(
            text=text,
            input_tokens=usage.get("promptTokenCount", 0),
            output_tokens=usage.get("candidatesTokenCount", 0)
            + usage.get("thoughtsTokenCount", 0),
        )


def _read_jsonl(path, model):
    path = Path(path)
    if not path.exists():
        raise ProviderNotConfigured(f"File does not exist: {path}")
    records = []
    with path.open(encoding="utf8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.parse_raw(line))
            except ValidationError as exc:
                raise ProviderNotConfigured(f"{path}:{number}: {exc}")
    return records


class ScriptEntry(Record):
    prompt_hash: str
    completion: str


class ScriptedProvider(Provider):
    """Fixed completion per prompt hash; the ``*`` hash is the default."""

    deterministic = True

    def __init__(self, script):
        self.script = dict(script)

    @classmethod
    def from_file(cls, path):
        entries = _read_jsonl(path, ScriptEntry)
        return cls({e.prompt_hash: e.completion for e in entries})

    def complete(self, variant, request):
        text = self.script.get(prompt_hash(request.prompt), self.script.get("*"))
        if text is None:
            raise ProviderUnavailable("No scripted completion for this prompt")
        return Completion(text=text, latency=0.0)


class ReplayProvider(Provider):
    """Replays a recorded transcript, usage included."""

    deterministic = True

    def __init__(self, entries):
        self.entries = {e.prompt_hash: e for e in entries}

    @classmethod
    def from_file(cls, path):
        return cls(_read_jsonl(path, TranscriptEntry))

    def complete(self, variant, request):
        entry = self.entries.get(prompt_hash(request.prompt))
        if entry is None:
            raise ProviderUnavailable("Prompt not found in transcript")
        return Completion(
            text=entry.completion,
            input_tokens=entry.input_tokens,
            output_tokens=entry.output_tokens,
            latency=entry.latency,
        )


def ranking_text(order):
    return " > ".join(f"[{i + 1}]" for i in order)


class IdentityProvider(Provider):
    """Empty expansion, identity ranking."""

    deterministic = True

    def complete(self, variant, request):
        if request.stage == Stage.QE:
            return Completion(text="", latency=0.0)
        return Completion(
            text=ranking_text(range(len(request.candidate_ids))), latency=0.0
        )


class OracleRerankProvider(Provider):
    """Ranks candidates by their judged grade. Test use only, it reads the qrels."""

    deterministic = True

    def __init__(self, qrels):
        self.qrels = qrels

    def complete(self, variant, request):
        if request.stage == Stage.QE:
            return Completion(text="", latency=0.0)
        grades = self.qrels.get(request.query_id)
        candidates = request.candidate_ids
        order = sorted(
            range(len(candidates)), key=lambda i: (-grades.get(candidates[i], 0), i)
        )
        return Completion(text=ranking_text(order), latency=0.0)


class Gateway:
    def __init__(
        self,
        price_table,
        providers,
        override=None,
        max_in_flight=8,
        max_retries=3,
        backoff=(1, 2, 4),
        collector=None,
        transcript_path=None,
    ):
        self.price_table = price_table
        self.providers = dict(providers)
        self.override = override
        self.max_in_flight = max_in_flight
        self.max_retries = max_retries
        self.backoff = tuple(backoff)
        self.collector = collector or UsageCollector()
        self.transcript = JsonlLog(transcript_path) if transcript_path else None
        self._slots = {}
        self._slots_lock = threading.Lock()

    def provider_for(self, variant):
        if self.override is not None:
            return self.override, self.override_id
        provider = self.providers.get(variant.provider_id)
        if provider is None:
            if variant.provider_id.startswith("mock:"):
                raise ProviderNotConfigured(
                    f"Mock provider {variant.provider_id} is not configured"
                )
            raise AuthError(
                f"No credentials for provider {variant.provider_id}: set "
                f"{config.api_key_name(variant.provider_id)}"
            )
        return provider, variant.provider_id

    @property
    def override_id(self):
        for provider_id, provider in self.providers.items():
            if provider is self.override:
                return provider_id
        return "override"

    def is_deterministic(self, variant_names):
        """True if every named variant is served by a deterministic provider."""
        for name in variant_names:
            provider, _ = self.provider_for(self.price_table[name])
            if not provider.deterministic:
                return False
        return True

    @contextmanager
    def _slot(self, provider_id):
        with self._slots_lock:
            slot = self._slots.get(provider_id)
            if slot is None:
                slot = threading.BoundedSemaphore(self.max_in_flight)
                self._slots[provider_id] = slot
        with slot:
            yield

    def _complete(self, provider, provider_id, variant, request):
        attempts = 1 if provider.deterministic else self.max_retries + 1
        last_error = None
        for attempt in range(attempts):
            try:
                with self._slot(provider_id):
                    return provider.complete(variant, request)
            except TransientError as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    delay = self.backoff[min(attempt, len(self.backoff) - 1)]
                    logger.warning(
                        "%s failed (attempt %s/%s), retrying in %ss: %s",
                        provider_id,
                        attempt + 1,
                        attempts,
                        delay,
                        exc,
                    )
                    time.sleep(delay)
        raise ProviderUnavailable(
            f"{provider_id} unavailable after {attempts} attempt(s): {last_error}"
        )

    def generate(self, variant_name, prompt, stage, query_id, candidate_ids=(), seed=0):
        variant = self.price_table[variant_name]
        provider, provider_id = self.provider_for(variant)

        prompt_tokens = provider.count_tokens(variant, prompt)
        if prompt_tokens is None:
            prompt_tokens = estimate_tokens(prompt)
        if prompt_tokens > variant.max_context_tokens:
            raise ContextOverflow(
                f"Prompt of ~{prompt_tokens} tokens exceeds {variant.name}'s "
                f"context of {variant.max_context_tokens}"
            )

        request = GenerationRequest(
            prompt=prompt,
            stage=stage,
            query_id=query_id,
            candidate_ids=list(candidate_ids),
            seed=seed,
        )
        start = time.monotonic()
        completion = self._complete(provider, provider_id, variant, request)
        elapsed = time.monotonic() - start

        estimated = completion.input_tokens is None or completion.output_tokens is None
        usage = UsageRecord(
            variant_name=variant.name,
            input_tokens=estimate_tokens(prompt)
            if completion.input_tokens is None
            else completion.input_tokens,
            output_tokens=estimate_tokens(completion.text)
            if completion.output_tokens is None
            else completion.output_tokens,
            latency=elapsed if completion.latency is None else completion.latency,
            stage=stage,
            query_id=query_id,
            estimated=estimated,
        )
        self.collector.add(usage)
        if self.transcript:
            self.transcript.append(
                TranscriptEntry(
                    prompt_hash=prompt_hash(prompt),
                    completion=completion.text,
                    input_tokens=usage.input_tokens,
                    output_tokens=usage.output_tokens,
                    latency=usage.latency,
                )
            )
        return completion.text, usage


MOCK_PROVIDERS = ("identity", "oracle-rerank", "scripted", "replay")


def build_providers(cfg, env, qrels=None):
    """Every provider this installation can serve, keyed by provider_id."""
    providers = {"mock:identity": IdentityProvider()}
    if qrels is not None:
        providers["mock:oracle-rerank"] = OracleRerankProvider(qrels)
    if cfg.get("SCRIPT_FILE"):
        providers["mock:scripted"] = ScriptedProvider.from_file(cfg["SCRIPT_FILE"])
    if cfg.get("TRANSCRIPT_FILE"):
        providers["mock:replay"] = ReplayProvider.from_file(cfg["TRANSCRIPT_FILE"])
    api_key = config.get_api_key("gemini", cfg, env)
    if api_key:
        providers["gemini"] = GeminiProvider(
            api_key,
            api_base=cfg.get("GEMINI_API_BASE") or GEMINI_API_BASE,
            timeout=cfg.get("REQUEST_TIMEOUT", 120),
        )
    return providers


def make_gateway(cfg, env, qrels=None, provider=None):
    """Gateway from settings; ``provider`` is ``mock:<name>`` to force one provider."""
    if not cfg.get("PRICE_TABLE"):
        raise PriceTableError("No price table configured, use --price-table")
    table = load_price_table(cfg["PRICE_TABLE"])
    providers = build_providers(cfg, env, qrels=qrels)

    override = None
    if provider:
        override = providers.get(provider)
        if override is None:
            raise ProviderNotConfigured(
                f"Provider {provider} is not configured "
                f"(mock providers: {', '.join(MOCK_PROVIDERS)})"
            )

    return Gateway(
        table,
        providers,
        override=override,
        max_in_flight=cfg.get("MAX_IN_FLIGHT", 8),
        max_retries=cfg.get("MAX_RETRIES", 3),
        backoff=cfg.get("RETRY_BACKOFF", (1, 2, 4)),
        collector=UsageCollector(cfg.get("USAGE_LEDGER")),
        transcript_path=cfg.get("RECORD_TRANSCRIPT"),
    )
