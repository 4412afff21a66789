import collections
import math
import random
from decimal import Decimal

import pytest

from rrpipe import metrics
from rrpipe.schema import (
    Gain,
    Provenance,
    Query,
    QueryResult,
    RankedEntry,
    RankedList,
    Stage,
    UsageRecord,
)


def ranked(*doc_ids):
    return RankedList(
        query_id="q1",
        entries=[RankedEntry(doc_id=d, score=0.0) for d in doc_ids],
        provenance=Provenance.RERANKED,
    )


def result(ndcg=0.0, recall=0.0, cost="0", latency=0.0, query_id="q1", **kwargs):
    return QueryResult(
        query_id=query_id,
        ndcg_at_10=ndcg,
        recall_at_10=recall,
        cost=Decimal(cost),
        latency=latency,
        **kwargs,
    )


def test_ndcg_ideal_order():
    judgments = {"a": 3, "b": 2, "c": 1, "d": 0}
    assert metrics.ndcg_at_k(ranked("a", "b", "c", "d"), judgments, 10) == 1.0


def test_ndcg_hand_computed():
    value = metrics.ndcg_at_k(ranked("d2", "d1"), {"d1": 1}, 10)
    assert value == pytest.approx(0.6309, abs=1e-4)


def test_ndcg_no_relevant():
    assert metrics.ndcg_at_k(ranked("a", "b"), {"a": 0}, 10) == 0.0


def test_ndcg_exponential_gain():
    judgments = {"a": 1, "b": 3}
    linear = metrics.ndcg_at_k(ranked("a", "b"), judgments, 10)
    exponential = metrics.ndcg_at_k(ranked("a", "b"), judgments, 10, Gain.EXPONENTIAL)
    assert linear == pytest.approx((1 + 3 / math.log2(3)) / (3 + 1 / math.log2(3)))
    assert exponential == pytest.approx((1 + 7 / math.log2(3)) / (7 + 1 / math.log2(3)))


def test_ndcg_k_must_be_positive():
    with pytest.raises(ValueError):
        metrics.ndcg_at_k(ranked("a"), {"a": 1}, 0)


def test_recall():
    assert metrics.recall_at_k(ranked("a", "b"), {"a": 1, "b": 2}, 10) == 1.0
    ids = [f"x{i}" for i in range(9)] + ["a", "b"]
    assert metrics.recall_at_k(ranked(*ids), {"a": 1, "b": 1}, 10) == 0.5
    with pytest.raises(metrics.NoRelevantDocs):
        metrics.recall_at_k(ranked("a"), {"a": 0}, 10)


def arrangements(counts, length):
    """Every distinct ordering of ``length`` grades drawn from ``counts``."""
    if length == 0:
        yield ()
        return
    for grade in list(counts):
        if counts[grade]:
            counts[grade] -= 1
            for rest in arrangements(counts, length - 1):
                yield (grade,) + rest
            counts[grade] += 1


def dcg(grades):
    return sum(g / math.log2(i + 2) for i, g in enumerate(grades))


def brute_force_ndcg(order, judgments, k):
    grades = [judgments.get(d, 0) for d in order]
    ideal = max(
        dcg(arrangement)
        for arrangement in arrangements(
            collections.Counter(judgments.values()), min(k, len(judgments))
        )
    )
    return dcg(grades[:k]) / ideal if ideal else 0.0


def test_metric_oracles():
    rng = random.Random(2024)
    for _ in range(1000):
        n = rng.randint(1, 8)
        doc_ids = [f"d{i}" for i in range(n)]
        judgments = {d: rng.randint(0, 3) for d in doc_ids}
        order = rng.sample(doc_ids, n)
        k = rng.randint(1, 10)
        assert metrics.ndcg_at_k(ranked(*order), judgments, k) == pytest.approx(
            brute_force_ndcg(order, judgments, k), abs=1e-9
        )

        relevant = {d for d, g in judgments.items() if g > 0}
        if relevant:
            expected = len(relevant & set(order[:k])) / len(relevant)
            assert metrics.recall_at_k(ranked(*order), judgments, k) == expected


def test_pairwise_swap_never_hurts():
    rng = random.Random(5)
    for _ in range(500):
        n = rng.randint(2, 12)
        doc_ids = [f"d{i}" for i in range(n)]
        judgments = {d: rng.randint(0, 3) for d in doc_ids}
        order = rng.sample(doc_ids, n)
        for i in range(n - 1):
            if judgments[order[i]] < judgments[order[i + 1]]:
                swapped = list(order)
                swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
                assert metrics.ndcg_at_k(
                    ranked(*swapped), judgments, 10
                ) >= metrics.ndcg_at_k(ranked(*order), judgments, 10)


def test_recall_at_10_ignores_order_within_top_10():
    rng = random.Random(11)
    doc_ids = [f"d{i}" for i in range(30)]
    judgments = {d: rng.randint(0, 1) for d in doc_ids}
    judgments["d0"] = 1
    top = doc_ids[:10]
    baseline = metrics.recall_at_k(ranked(*doc_ids), judgments, 10)
    for _ in range(100):
        shuffled = rng.sample(top, 10) + doc_ids[10:]
        assert metrics.recall_at_k(ranked(*shuffled), judgments, 10) == baseline


def test_query_result(price_table):
    usages = [
        UsageRecord(
            variant_name="mock-oracle",
            input_tokens=1000,
            output_tokens=100,
            latency=1.5,
            stage=stage,
            query_id="q1",
        )
        for stage in (Stage.QE, Stage.RR, Stage.RR)
    ]
    query = Query(query_id="q1", subset="biology", text="t")
    qr = metrics.query_result(
        query, ranked("a", "b"), {"b": 1}, usages, price_table, degraded=True
    )
    assert qr.subset == "biology"
    assert qr.recall_at_10 == 1.0
    assert qr.ndcg_at_10 == pytest.approx(1 / math.log2(3))
    # 3 x (1000 x 0.30 + 100 x 2.50) micro-dollars
    assert qr.cost == Decimal("0.001650")
    assert qr.latency == 4.5
    assert (qr.input_tokens, qr.output_tokens, qr.llm_calls) == (3000, 300, 3)
    assert qr.degraded
    assert qr.judged


def test_query_result_unjudged(price_table):
    query = Query(query_id="q1", text="t")
    qr = metrics.query_result(query, ranked("a"), {}, [], price_table, degraded=False)
    assert not qr.judged
    assert qr.cost == 0


def test_aggregate_single():
    row = metrics.aggregate([result(0.5, 0.5, "0.01", 2.0)])
    assert (row.ndcg_at_10, row.recall_at_10) == (50.0, 50.0)
    assert row.cost == Decimal("0.01")
    assert row.latency == 2.0
    assert row.count == 1


def test_aggregate_mean():
    row = metrics.aggregate([result(0.0), result(1.0, query_id="q2")])
    assert row.ndcg_at_10 == 50.0


def test_aggregate_excludes_unjudged_from_metrics():
    row = metrics.aggregate(
        [
            result(1.0, 1.0, "0.02", 1.0),
            result(0.0, 0.0, "0.04", 3.0, query_id="q2", judged=False, degraded=True),
        ]
    )
    assert row.ndcg_at_10 == 100.0
    assert row.recall_at_10 == 100.0
    assert row.cost == Decimal("0.03")
    assert row.latency == 2.0
    assert (row.count, row.excluded, row.degraded) == (2, 1, 1)


def test_aggregate_empty():
    with pytest.raises(metrics.EmptyResults):
        metrics.aggregate([])


def test_results_file_round_trip(tmp_path):
    results = [result(0.25, 0.5, "0.001234", 0.1), result(query_id="q2", judged=False)]
    path = metrics.write_results(tmp_path / "results.jsonl", results)
    assert metrics.read_results(path) == results
