import csv
from datetime import datetime, timezone
from decimal import Decimal

from rrpipe import corpus, gateway, metrics, pipeline
from rrpipe.schema import Document, PipelineConfig, Query, QueryResult, RunRecord

DESK_SIZE = 50
DESK_LENGTH = 60

MOCK_VARIANTS = [
    # name, provider_id, thinking, price_in, price_out
    ("mock-identity", "mock:identity", "off", "0.10", "0.40"),
    ("mock-oracle", "mock:oracle-rerank", "off", "0.30", "2.50"),
    ("mock-scripted", "mock:scripted", "off", "0.30", "2.50"),
    ("mock-scripted-think", "mock:scripted", "dynamic", "0.30", "2.50"),
    ("mock-replay", "mock:replay", "dynamic", "1.25", "10.00"),
    ("live-flash", "gemini", "off", "0.30", "2.50"),
]


def desk_document(j):
    """d00 has the most "shared" terms; every document is DESK_LENGTH terms long.

    So a query for "shared" ranks dj at position j + 1.
    """
    terms = ["shared"] * (DESK_SIZE - j)
    terms += [f"pad{j}n{m}" for m in range(DESK_LENGTH - len(terms))]
    return Document(doc_id=f"d{j:02d}", subset="desk", text=" ".join(terms))


def desk_judgments():
    """Grades spread over BM25 ranks 1-9, 13-21 and 31-39."""
    judgments = {}
    for i in range(9):
        judgments[f"q{i}"] = {
            f"d{i:02d}": 1,
            f"d{12 + i:02d}": 2,
            f"d{30 + i:02d}": 3,
        }
    judgments["q9"] = {"d03": 1, "d07": 2}
    return judgments


class DeskDataset:
    def __init__(self):
        self.corpus = corpus.Corpus(desk_document(j) for j in range(DESK_SIZE))
        self.queries = corpus.QuerySet(
            Query(
                query_id=f"q{i}",
                subset="biology" if i % 2 == 0 else "economics",
                text=f"shared riddle{i}",
            )
            for i in range(10)
        )
        self.qrels = corpus.Qrels(desk_judgments())

    def write(self, path):
        self.corpus_path = corpus.write_corpus(path / "corpus.jsonl", self.corpus)
        self.queries_path = corpus.write_queries(path / "queries.jsonl", self.queries)
        self.qrels_path = corpus.write_qrels(path / "qrels.txt", self.qrels)
        return self


def equal_size_corpus(n=120):
    """Documents of identical byte length, all matching the query "common"."""
    return corpus.Corpus(
        Document(doc_id=f"e{j:03d}", text=f"common passage number e{j:03d} filler")
        for j in range(n)
    )


def write_price_table(path, variants=MOCK_VARIANTS, max_context_tokens=1_000_000):
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "name",
                "provider_id",
                "thinking",
                "price_in",
                "price_out",
                "max_context_tokens",
            ]
        )
        for row in variants:
            writer.writerow(list(row) + [max_context_tokens])
    return path


def mock_gateway(price_table, qrels=None, script=None, **kwargs):
    providers = {"mock:identity": gateway.IdentityProvider()}
    if qrels is not None:
        providers["mock:oracle-rerank"] = gateway.OracleRerankProvider(qrels)
    if script is not None:
        providers["mock:scripted"] = gateway.ScriptedProvider(script)
    return gateway.Gateway(price_table, providers, **kwargs)


def make_record(ndcg, recall, cost, latency=0.0, **config):
    """A RunRecord of one query whose aggregate row is (ndcg, recall, cost, latency).

    ndcg and recall are given on the 0-100 scale, as reports print them.
    """
    run_config = PipelineConfig(**config)
    result = QueryResult(
        query_id="q0",
        subset="desk",
        ndcg_at_10=ndcg / 100,
        recall_at_10=recall / 100,
        cost=Decimal(cost),
        latency=latency,
    )
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    return RunRecord(
        config=run_config,
        config_hash=pipeline.config_hash(run_config),
        per_query=[result],
        aggregate=metrics.aggregate([result]),
        started_at=epoch,
        finished_at=epoch,
        toolkit_version=pipeline.toolkit_version(),
    )
