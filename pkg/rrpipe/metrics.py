"""Ranking metrics and the per-query cost/latency ledger."""
import math
from decimal import Decimal

from rrpipe import corpus
from rrpipe.gateway import cost_micros, micros_to_dollars
from rrpipe.schema import AggregateRow, Gain, InvalidArgument, QueryResult


class NoRelevantDocs(Exception):
    """The query has nothing to find; it is excluded rather than scored."""


class EmptyResults(Exception):
    pass


def _gain(grade, gain):
    if gain == Gain.EXPONENTIAL:
        return 2**grade - 1
    return grade


def dcg(grades, k, gain=Gain.LINEAR):
    return sum(
        _gain(grade, gain) / math.log2(rank + 1)
        for rank, grade in enumerate(grades[:k], start=1)
    )


def ndcg_at_k(ranked, judgments, k, gain=Gain.LINEAR):
    if k < 1:
        raise InvalidArgument(f"k must be positive, got {k}")
    ideal = sorted((g for g in judgments.values() if g > 0), reverse=True)
    idcg = dcg(ideal, k, gain)
    if idcg == 0:
        return 0.0
    grades = [judgments.get(doc_id, 0) for doc_id in ranked.doc_ids]
    return dcg(grades, k, gain) / idcg


def recall_at_k(ranked, judgments, k):
    relevant = {doc_id for doc_id, grade in judgments.items() if grade > 0}
    if not relevant:
        raise NoRelevantDocs()
    found = relevant.intersection(ranked.doc_ids[:k])
    return len(found) / len(relevant)


def query_result(
    query, ranked, judgments, usages, price_table, degraded, gain=Gain.LINEAR
):
    """Score the final list and ledger what it cost.

    Cost is the sum of every stage call; latency is their sum too, since a
    query's calls run one after another.
    """
    try:
        recall = recall_at_k(ranked, judgments, 10)
        ndcg = ndcg_at_k(ranked, judgments, 10, gain)
        judged = True
    except NoRelevantDocs:
        recall = ndcg = 0.0
        judged = False

    return QueryResult(
        query_id=query.query_id,
        subset=query.subset,
        ndcg_at_10=ndcg,
        recall_at_10=recall,
        cost=micros_to_dollars(sum(cost_micros(u, price_table) for u in usages)),
        latency=sum(u.latency for u in usages),
        degraded=degraded,
        judged=judged,
        input_tokens=sum(u.input_tokens for u in usages),
        output_tokens=sum(u.output_tokens for u in usages),
        llm_calls=len(usages),
    )


def _mean(values):
    return sum(values) / len(values) if values else 0.0


def aggregate(results):
    """Means, with metrics scaled to 0-100.

    Queries without relevant documents count towards cost and latency but
    not towards the metric means.
    """
    if not results:
        raise EmptyResults("Nothing to aggregate")
    judged = [r for r in results if r.judged]
    return AggregateRow(
        ndcg_at_10=_mean([r.ndcg_at_10 for r in judged]) * 100,
        recall_at_10=_mean([r.recall_at_10 for r in judged]) * 100,
        cost=sum((r.cost for r in results), Decimal(0)) / len(results),
        latency=_mean([r.latency for r in results]),
        count=len(results),
        degraded=sum(r.degraded for r in results),
        excluded=len(results) - len(judged),
    )


def write_results(path, results):
    return corpus.write_records(path, results)


def read_results(path):
    return list(corpus.read_records(path, QueryResult))
