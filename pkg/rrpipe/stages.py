"""The two LLM stages: query expansion and listwise re-ranking."""
import logging
import re

from rrpipe import prompts
from rrpipe.gateway import ProviderUnavailable
from rrpipe.schema import (
    OFF,
    ExpandedQuery,
    InvalidArgument,
    Permutation,
    Provenance,
    QEMode,
    RankedList,
    Stage,
)

logger = logging.getLogger(__name__)

IDENTIFIER_RE = re.compile(r"\[(\d+)\]")
# longer identifiers cannot be in range, and int() refuses very long digit runs
MAX_IDENTIFIER_DIGITS = 9
BYTES_PER_TOKEN = 4


def expand_query(gateway, query, variant, mode=QEMode.CONCAT, seed=0):
    mode = QEMode(mode)
    if mode == QEMode.OFF or variant == OFF:
        return ExpandedQuery(
            query_id=query.query_id,
            original_text=query.text,
            retrieval_text=query.text,
            mode=QEMode.OFF,
        )

    prompt = prompts.render_expansion(query.text)
    try:
        text, usage = gateway.generate(
            variant, prompt, stage=Stage.QE, query_id=query.query_id, seed=seed
        )
    except ProviderUnavailable as exc:
        logger.warning(
            "Expansion of %s fell back to the original query: %s", query.query_id, exc
        )
        return ExpandedQuery(
            query_id=query.query_id,
            original_text=query.text,
            retrieval_text=query.text,
            mode=QEMode.OFF,
            degraded=True,
        )

    expansion = text.strip()
    if mode == QEMode.CONCAT:
        retrieval_text = f"{query.text} {expansion}"
    else:
        retrieval_text = expansion
    return ExpandedQuery(
        query_id=query.query_id,
        original_text=query.text,
        expansion_text=expansion,
        retrieval_text=retrieval_text,
        mode=mode,
        usage=usage,
    )


def parse_permutation(response, k):
    """Read "[3] > [1] > [2]" into 0-based order, repairing whatever is wrong.

    Out-of-range identifiers are dropped, repeats keep their first position,
    and anything never mentioned is appended in candidate order.
    """
    order = []
    seen = set()
    repaired = False
    for match in IDENTIFIER_RE.finditer(response):
        digits = match.group(1)
        index = int(digits) - 1 if len(digits) <= MAX_IDENTIFIER_DIGITS else -1
        if not 0 <= index < k or index in seen:
            repaired = True
            continue
        seen.add(index)
        order.append(index)

    missing = [i for i in range(k) if i not in seen]
    if missing:
        repaired = True
        order.extend(missing)
    return Permutation(order=order, repaired=repaired)


def window_plan(k, window, stride):
    """Start offsets of the windows, tail first, head window last.

    Every window is full width; the head window is always [0, window).
    """
    if k <= window:
        return [0]
    return list(range(k - window, 0, -stride)) + [0]


def truncate_passage(text, max_tokens):
    limit = max_tokens * BYTES_PER_TOKEN
    data = text.encode("utf8")
    if len(data) <= limit:
        return text, False
    return data[:limit].decode("utf8", errors="ignore"), True


def rerank_listwise(
    gateway,
    query,
    candidates,
    k,
    variant,
    documents,
    window=20,
    stride=10,
    max_passage_tokens=300,
    max_window=50,
    seed=0,
):
    """Permute the top-k candidates with back-to-front sliding windows.

    ``documents`` maps doc_id to Document for the passage text. Returns the
    permutation and the usage of every call made.
    """
    if not 1 <= k <= len(candidates.entries):
        raise InvalidArgument(f"k={k} outside 1..{len(candidates.entries)}")
    if stride > window:
        raise InvalidArgument(f"stride={stride} exceeds window={window}")
    if window > max_window:
        raise InvalidArgument(
            f"window={window} exceeds the per-call cap of {max_window}"
        )

    if k == 1:
        return Permutation.identity(1), []

    doc_ids = candidates.doc_ids[:k]
    passages = []
    truncated = 0
    for doc_id in doc_ids:
        text, cut = truncate_passage(documents[doc_id].text, max_passage_tokens)
        passages.append(text)
        truncated += cut
    if truncated:
        logger.debug("%s: truncated %s passages", query.query_id, truncated)

    order = list(range(k))
    width = min(window, k)
    usages = []
    repaired = False
    try:
        for start in window_plan(k, window, stride):
            span = order[start : start + width]
            prompt = prompts.render_rerank(query.text, [passages[i] for i in span])
            text, usage = gateway.generate(
                variant,
                prompt,
                stage=Stage.RR,
                query_id=query.query_id,
                candidate_ids=[doc_ids[i] for i in span],
                seed=seed,
            )
            usages.append(usage)
            local = parse_permutation(text, len(span))
            if local.repaired:
                logger.debug("%s: repaired ranking %r", query.query_id, text)
            repaired = repaired or local.repaired
            order[start : start + width] = [span[i] for i in local.order]
    except ProviderUnavailable as exc:
        logger.warning(
            "Re-ranking of %s fell back to retrieval order: %s", query.query_id, exc
        )
        return (
            Permutation.identity(k, repaired=True, degraded=True, truncated=truncated),
            usages,
        )

    return Permutation(order=order, repaired=repaired, truncated=truncated), usages


def apply_permutation(candidates, permutation):
    """Reorder the head of the candidate list; the tail keeps retrieval order."""
    k = len(permutation.order)
    head = [candidates.entries[i] for i in permutation.order]
    return RankedList(
        query_id=candidates.query_id,
        entries=head + candidates.entries[k:],
        provenance=Provenance.RERANKED,
    )
