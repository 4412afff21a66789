"""QE -> BM25 -> listwise RR for one configuration."""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

from rrpipe import metrics, stages
from rrpipe.index import search_text
from rrpipe.schema import OFF, InvalidArgument, RunRecord

logger = logging.getLogger(__name__)

# timestamps of runs made only with deterministic providers
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@lru_cache(maxsize=None)
def toolkit_version():
    return (Path(__file__).parent / "VERSION").read_text().strip()


def config_hash(config):
    """Stable across runs; changes with the templates and the toolkit version."""
    canonical = json.dumps(
        {"config": json.loads(config.json()), "version": toolkit_version()},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf8")).hexdigest()[:16]


def utc_now():
    return datetime.now(timezone.utc)


def frozen_clock():
    return EPOCH


def config_variants(config):
    return [v for v in (config.qe_variant, config.rr_variant) if v != OFF]


def check_config(config, gateway, max_window):
    """Raise for anything that would fail every query of this config."""
    for name in config_variants(config):
        gateway.provider_for(gateway.price_table[name])
    if config.reranks and config.window > max_window:
        raise InvalidArgument(
            f"window={config.window} exceeds the per-call cap of {max_window}"
        )


def run_query(query, config, index, qrels, gateway, documents, max_window=50):
    usages = []
    expanded = stages.expand_query(
        gateway, query, config.qe_variant, config.qe_mode, seed=config.seed
    )
    if expanded.usage:
        usages.append(expanded.usage)
    degraded = expanded.degraded

    ranked = search_text(
        index,
        expanded.retrieval_text,
        config.initial_n,
        params=config.bm25,
        query_id=query.query_id,
    )

    k = min(config.k, len(ranked.entries))
    if config.reranks and k:
        permutation, rr_usages = stages.rerank_listwise(
            gateway,
            query,
            ranked.truncate(k),
            k,
            config.rr_variant,
            documents,
            window=config.window,
            stride=config.stride,
            max_passage_tokens=config.max_passage_tokens,
            max_window=max_window,
            seed=config.seed,
        )
        usages.extend(rr_usages)
        degraded = degraded or permutation.degraded
        ranked = stages.apply_permutation(ranked, permutation)

    return metrics.query_result(
        query,
        ranked,
        qrels.get(query.query_id),
        usages,
        gateway.price_table,
        degraded,
        gain=config.gain,
    )


def run_config(
    config,
    queries,
    index,
    qrels,
    gateway,
    documents,
    concurrency=4,
    max_window=50,
    command=None,
):
    check_config(config, gateway, max_window)
    if gateway.is_deterministic(config_variants(config)):
        clock = frozen_clock
    else:
        clock = utc_now

    started_at = clock()
    with ThreadPoolExecutor(max_workers=concurrency) as executor:
        per_query = list(
            executor.map(
                lambda query: run_query(
                    query, config, index, qrels, gateway, documents, max_window
                ),
                queries,
            )
        )
    finished_at = clock()

    record = RunRecord(
        config=config,
        config_hash=config_hash(config),
        per_query=per_query,
        aggregate=metrics.aggregate(per_query),
        started_at=started_at,
        finished_at=finished_at,
        toolkit_version=toolkit_version(),
        command=command,
    )
    logger.info(
        "%s qe=%s rr=%s k=%s: NDCG@10 %.2f, Recall@10 %.2f, $%s/query, %s degraded",
        record.config_hash,
        config.qe_variant,
        config.rr_variant,
        config.k,
        record.aggregate.ndcg_at_10,
        record.aggregate.recall_at_10,
        record.aggregate.cost,
        record.aggregate.degraded,
    )
    return record
