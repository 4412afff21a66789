from decimal import Decimal

import pytest
from pydantic import ValidationError

from rrpipe import pipeline
from rrpipe.schema import (
    OFF,
    Document,
    ModelVariant,
    Permutation,
    PipelineConfig,
    Provenance,
    QEMode,
    Query,
    RankedEntry,
    RankedList,
    RunManifest,
    RunRecord,
    Thinking,
)
from tests import utils


def test_document_validation():
    assert Document(doc_id="d1", text="x").subset == ""
    with pytest.raises(ValidationError):
        Document(doc_id="", text="x")
    with pytest.raises(ValidationError):
        Document(doc_id="d1", text="  \n")


def test_query_validation():
    with pytest.raises(ValidationError):
        Query(query_id="", text="x")


def test_records_are_immutable():
    document = Document(doc_id="d1", text="x")
    with pytest.raises(TypeError):
        document.text = "y"


def test_model_variant():
    variant = ModelVariant(
        name="flash-think",
        provider_id="gemini",
        thinking="dynamic",
        price_in="0.30",
        price_out="2.50",
        max_context_tokens=1048576,
        model="gemini-2.5-flash",
    )
    assert variant.thinking == Thinking.DYNAMIC
    assert variant.price_out == Decimal("2.50")
    assert variant.model_id == "gemini-2.5-flash"
    assert variant.copy(update={"model": None}).model_id == "flash-think"

    with pytest.raises(ValidationError):
        ModelVariant(
            name="x",
            provider_id="gemini",
            price_in="-1",
            price_out="0",
            max_context_tokens=10,
        )


def test_ranked_list_initial_order():
    entries = [RankedEntry(doc_id="b", score=2.0), RankedEntry(doc_id="a", score=2.0)]
    with pytest.raises(ValidationError, match="sorted by score"):
        RankedList(query_id="q1", entries=entries)

    reranked = RankedList(
        query_id="q1", entries=entries, provenance=Provenance.RERANKED
    )
    assert reranked.doc_ids == ["b", "a"]
    assert reranked.truncate(1).doc_ids == ["b"]


def test_ranked_list_duplicates():
    entries = [RankedEntry(doc_id="a", score=2.0), RankedEntry(doc_id="a", score=1.0)]
    with pytest.raises(ValidationError, match="duplicate"):
        RankedList(query_id="q1", entries=entries)


def test_permutation():
    assert Permutation.identity(3).order == [0, 1, 2]
    assert Permutation(order=[2, 0, 1]).order == [2, 0, 1]
    for order in ([0, 0, 1], [1, 2], [-1, 0]):
        with pytest.raises(ValidationError, match="not a permutation"):
            Permutation(order=order)


def test_pipeline_config_defaults():
    config = PipelineConfig()
    assert config.qe_variant == OFF
    assert config.qe_mode == QEMode.OFF
    assert not config.reranks
    assert (config.k, config.window, config.stride) == (100, 20, 10)
    assert config.initial_n == 100
    assert config.max_passage_tokens == 300
    assert set(config.template_hashes) == {"qe", "rr"}


def test_pipeline_config_normalises_qe_off():
    assert PipelineConfig(qe_variant="pro", qe_mode="off").qe_variant == OFF
    assert PipelineConfig(qe_variant="off", qe_mode="replace").qe_mode == QEMode.OFF
    assert PipelineConfig(qe_variant="pro").qe_mode == QEMode.CONCAT


def test_pipeline_config_initial_n_follows_k():
    assert PipelineConfig(k=200).initial_n == 200
    assert PipelineConfig(k=20, initial_n=50).initial_n == 50


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(k=0),
        dict(k=20, initial_n=10),
        dict(window=10, stride=11),
        dict(stride=0),
        dict(bm25=dict(b=1.5)),
        dict(qe_mode="sideways"),
    ],
)
def test_pipeline_config_invalid(kwargs):
    with pytest.raises(ValidationError):
        PipelineConfig(**kwargs)


def test_pipeline_config_json_round_trip():
    config = PipelineConfig(qe_variant="pro", rr_variant="flash-lite", k=50, seed=7)
    assert PipelineConfig.parse_raw(config.json()) == config


def test_run_record_round_trip():
    record = utils.make_record(30.0, 50.0, "0.0141", 2.5, qe_variant="flash-think")
    assert RunRecord.parse_raw(record.json()) == record
    assert '"cost": "0.0141"' in record.json()


def test_run_record_aggregate_must_match():
    record = utils.make_record(30.0, 50.0, "0.0141", qe_variant="flash-think")
    tampered = record.aggregate.copy(update={"ndcg_at_10": 99.0})
    with pytest.raises(ValidationError, match="aggregate does not match"):
        RunRecord(**dict(record, aggregate=tampered))


def test_run_record_needs_results():
    config = PipelineConfig()
    with pytest.raises(ValidationError, match="needs per-query results"):
        RunRecord(
            config=config,
            config_hash=pipeline.config_hash(config),
            per_query=[],
            aggregate=dict(
                ndcg_at_10=0,
                recall_at_10=0,
                cost=0,
                latency=0,
                count=0,
                degraded=0,
                excluded=0,
            ),
            started_at=pipeline.EPOCH,
            finished_at=pipeline.EPOCH,
            toolkit_version=pipeline.toolkit_version(),
        )


def test_manifest_get():
    manifest = RunManifest.parse_obj(
        {
            "toolkit_version": "0.1.0",
            "entries": [
                {"config_hash": "a", "status": "done", "record": "a.json"},
                {"config_hash": "b", "status": "failed", "error": "boom"},
            ],
        }
    )
    assert manifest.get("b").error == "boom"
    assert manifest.get("c") is None
