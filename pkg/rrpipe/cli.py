import argparse
import getpass
import json
import logging
import os
import re
import shlex
import sys
import time
from pathlib import Path

from pydantic import ValidationError

from rrpipe import config, corpus, index, metrics, pipeline, report, stages, sweep
from rrpipe.analysis import Analyzer
from rrpipe.gateway import (
    PriceTableError,
    ProviderNotConfigured,
    UnknownVariant,
    make_gateway,
)
from rrpipe.schema import (
    Bm25Params,
    InvalidArgument,
    PipelineConfig,
    QEMode,
    Query,
    RankedList,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


class UsageError(Exception):
    pass


# problems with what the user handed us, rather than with running it
VALIDATION_ERRORS = (
    corpus.CorpusError,
    index.EmptyCorpus,
    index.IndexFormatError,
    PriceTableError,
    UnknownVariant,
    ProviderNotConfigured,
    ValidationError,
    json.JSONDecodeError,
    InvalidArgument,
    UsageError,
    sweep.InvalidGrid,
    sweep.RunStoreError,
    report.MissingAxis,
)

logging_defaults = {
    "user": getpass.getuser(),
    "command": "",
}

# handlers installed by configure_logging, replaced on reconfiguration
_handlers = []


def record_with_defaults(*args, **kwargs):
    record = logging.LogRecord(*args, **kwargs)
    record.__dict__.update(logging_defaults)
    return record


def configure_logging(cfg, verbose=0, command=""):
    root = logging.getLogger()
    # ensure the root logger processes every log message - we'll filter with
    # handlers
    root.setLevel(logging.NOTSET)
    for handler in _handlers:
        root.removeHandler(handler)
        handler.close()
    _handlers.clear()

    keys = config.api_keys(cfg, os.environ)
    if keys:
        # diagnostics go straight to the user using the default format, but
        # redacted
        user_output = RedactingStreamHandler(keys)
    else:
        user_output = logging.StreamHandler()
    user_output.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.addHandler(user_output)
    _handlers.append(user_output)

    logfile = cfg.get("LOGFILE")
    if logfile:
        # add user and command line to LogRecords
        logging_defaults["command"] = command
        logging.setLogRecordFactory(record_with_defaults)
        # now we can use them in formatting our log message
        formatter = logging.Formatter(
            fmt="{asctime} {levelname} '{message}' user={user} command={command}",
            datefmt="%Y-%m-%d %H:%M:%S",
            style="{",
        )
        # use utc time
        formatter.converter = time.gmtime
        file_handler = logging.FileHandler(logfile)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        if keys:
            file_handler.addFilter(Redactor(keys))
        root.addHandler(file_handler)
        _handlers.append(file_handler)


class Redactor(logging.Filter):
    def __init__(self, keys):
        super().__init__()
        self.__pattern = re.compile("|".join(re.escape(k) for k in keys))

    def filter(self, record):
        message = record.getMessage()
        record.msg = self.__pattern.sub("xxxxxx", message)
        record.args = ()
        return True


class RedactingStreamHandler(logging.StreamHandler):
    def __init__(self, keys, *args, **kwargs):
        if isinstance(keys, str):
            keys = [keys]
        super().__init__(*args, **kwargs)
        self.addFilter(Redactor(keys))


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit 1, like every other validation error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def print_json(data):
    print(json.dumps(data, indent=2, sort_keys=True))


def make_analyzer(cfg):
    return Analyzer(remove_stopwords=cfg["REMOVE_STOPWORDS"], stem=cfg["STEM"])


def bm25_params(cfg):
    return Bm25Params(k1=cfg["BM25_K1"], b=cfg["BM25_B"])


def load_dataset(options):
    documents = corpus.load_corpus(options.corpus)
    queries = corpus.load_queries(options.queries)
    qrels = corpus.load_qrels(options.qrels, queries)
    queries = corpus.filter_subsets(queries, options.subset)
    if not len(queries):
        raise UsageError(f"No queries in subsets {', '.join(options.subset)}")
    return documents, queries, qrels


def get_index(options, documents, cfg):
    if options.index:
        return index.load_index(options.index)
    return index.build_index(documents, bm25_params(cfg), make_analyzer(cfg))


def get_query(options):
    if options.query_text:
        return Query(query_id=options.query_id or "query", text=options.query_text)
    if not options.queries or not options.query_id:
        raise UsageError("Use --query-text, or --queries with --query-id")
    queries = corpus.load_queries(options.queries)
    if options.query_id not in queries:
        raise UsageError(f"Unknown query_id {options.query_id!r}")
    return queries[options.query_id]


def ingest(options, cfg):
    if options.bright_documents or options.bright_examples:
        if not (options.bright_documents and options.bright_examples and options.out):
            raise UsageError(
                "--bright-documents, --bright-examples and --out go together"
            )
        documents, queries, qrels = corpus.convert_bright(
            options.bright_documents, options.bright_examples, options.subset_name
        )
    else:
        if not (options.corpus and options.queries and options.qrels):
            raise UsageError("Use --corpus, --queries and --qrels, or the BRIGHT flags")
        documents = corpus.load_corpus(options.corpus)
        queries = corpus.load_queries(options.queries)
        qrels = corpus.load_qrels(options.qrels, queries)

    if options.out:
        out = Path(options.out)
        corpus.write_corpus(out / "corpus.jsonl", documents)
        corpus.write_queries(out / "queries.jsonl", queries)
        corpus.write_qrels(out / "qrels.txt", qrels)
        logger.info("Wrote dataset to %s", out)

    print_json(
        {
            "documents": len(documents),
            "queries": len(queries),
            "judged_queries": len(qrels),
            "subsets": sorted({q.subset for q in queries}),
            "warnings": qrels.warnings,
        }
    )


def build(options, cfg):
    documents = corpus.load_corpus(options.corpus)
    built = index.build_index(documents, bm25_params(cfg), make_analyzer(cfg))
    path = index.save_index(built, options.out)
    print_json(
        {
            "index": str(path),
            "documents": built.doc_count,
            "terms": len(built.postings),
            "avg_doc_length": built.avg_doc_length,
        }
    )


def search(options, cfg):
    loaded = index.load_index(options.index)
    query = get_query(options)
    ranked = index.search_text(
        loaded, query.text, options.n, params=bm25_params(cfg), query_id=query.query_id
    )
    if options.json:
        print(ranked.json(indent=2))
        return
    for rank, entry in enumerate(ranked.entries, start=1):
        print(f"{rank}\t{entry.doc_id}\t{entry.score:.6f}")


def expand(options, cfg):
    gateway = make_gateway(cfg, os.environ, provider=options.provider)
    query = get_query(options)
    expanded = stages.expand_query(
        gateway, query, options.variant, options.mode, seed=options.seed or 0
    )
    print(expanded.json(indent=2))


def rerank(options, cfg):
    candidates = RankedList.parse_file(options.candidates)
    documents = corpus.load_corpus(options.corpus)
    gateway = make_gateway(cfg, os.environ, provider=options.provider)
    query = get_query(options)
    k = min(options.k, len(candidates.entries))
    permutation, usages = stages.rerank_listwise(
        gateway,
        query,
        candidates,
        k,
        options.variant,
        documents,
        window=options.window,
        stride=options.stride,
        max_passage_tokens=cfg["MAX_PASSAGE_TOKENS"],
        max_window=cfg["MAX_WINDOW"],
        seed=options.seed or 0,
    )
    reranked = stages.apply_permutation(candidates, permutation)
    print_json(
        {
            "permutation": json.loads(permutation.json()),
            "doc_ids": reranked.doc_ids[:k],
            "llm_calls": len(usages),
            "input_tokens": sum(u.input_tokens for u in usages),
            "output_tokens": sum(u.output_tokens for u in usages),
        }
    )


def run_one(options, cfg):
    run_config = PipelineConfig.parse_file(options.config)
    if options.seed is not None:
        run_config = PipelineConfig.parse_obj(
            dict(run_config.dict(), seed=options.seed)
        )
    documents, queries, qrels = load_dataset(options)
    gateway = make_gateway(cfg, os.environ, qrels=qrels, provider=options.provider)
    record = pipeline.run_config(
        run_config,
        queries,
        get_index(options, documents, cfg),
        qrels,
        gateway,
        documents,
        concurrency=cfg["QUERY_CONCURRENCY"],
        max_window=cfg["MAX_WINDOW"],
        command=options.command_line,
    )
    if options.out:
        out = Path(options.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(record.json(indent=2) + "\n", encoding="utf8")
        metrics.write_results(out / "results.jsonl", record.per_query)
        logger.info("Wrote run %s to %s", record.config_hash, out)
    print(record.aggregate.json(indent=2))


def run_grid(options, cfg):
    grid = sweep.load_grid(options.grid)
    if options.seed is not None:
        grid = [
            PipelineConfig.parse_obj(dict(c.dict(), seed=options.seed)) for c in grid
        ]
    documents, queries, qrels = load_dataset(options)
    gateway = make_gateway(cfg, os.environ, qrels=qrels, provider=options.provider)
    store = sweep.RunStore(options.store)
    records = sweep.run_sweep(
        grid,
        queries,
        documents,
        qrels,
        gateway,
        store,
        resume=options.resume,
        index=get_index(options, documents, cfg),
        concurrency=cfg["QUERY_CONCURRENCY"],
        max_window=cfg["MAX_WINDOW"],
        command=options.command_line,
    )
    failed = len(grid) - len(records)
    print_json(
        {
            "store": str(store.path),
            "configs": len(grid),
            "completed": len(records),
            "failed": failed,
        }
    )
    if failed:
        raise RuntimeError(f"{failed} of {len(grid)} configs failed, see the manifest")


def emit(options, cfg):
    records = sweep.RunStore(options.store).records()
    rows = [r.strip() for r in options.rows.split(",")] if options.rows else None
    for path in report.emit_report(records, options.shape, options.out, rows):
        print(path)


common = argparse.ArgumentParser(add_help=False)
common.add_argument("--verbose", "-v", action="count", default=0)
common.add_argument("--settings", help="settings file, instead of the usual lookup")
common.add_argument("--seed", type=int, help="seed passed to every provider call")
common.add_argument("--price-table", help="CSV of model variants and prices")
common.add_argument("--provider", help="force one provider, e.g. mock:identity")
common.add_argument("--script-file", help="completions for mock:scripted")
common.add_argument("--transcript-file", help="transcript for mock:replay")
common.add_argument("--record-transcript", help="append a replayable transcript")
common.add_argument("--usage-ledger", help="append every UsageRecord as JSON lines")
common.add_argument("--concurrency", type=int, help="queries in flight")
common.add_argument("--k1", type=float)
common.add_argument("--b", type=float)
common.add_argument("--no-stopwords", action="store_true")
common.add_argument("--stem", action="store_true")


def add_dataset_arguments(subparser):
    subparser.add_argument("--corpus", required=True)
    subparser.add_argument("--queries", required=True)
    subparser.add_argument("--qrels", required=True)
    subparser.add_argument("--index", help="index snapshot, built in memory if absent")
    subparser.add_argument(
        "--subset", action="append", default=[], help="only these subsets"
    )


def add_query_arguments(subparser):
    subparser.add_argument("--query-text")
    subparser.add_argument("--queries")
    subparser.add_argument("--query-id")


parser = ArgumentParser(prog="rrpipe")
subparsers = parser.add_subparsers(dest="subcommand", required=True)

ingest_parser = subparsers.add_parser(
    "ingest", parents=[common], help="validate or convert a dataset"
)
ingest_parser.add_argument("--corpus")
ingest_parser.add_argument("--queries")
ingest_parser.add_argument("--qrels")
ingest_parser.add_argument("--bright-documents")
ingest_parser.add_argument("--bright-examples")
ingest_parser.add_argument("--subset-name", default="")
ingest_parser.add_argument("--out")
ingest_parser.set_defaults(func=ingest)

index_parser = subparsers.add_parser(
    "index", parents=[common], help="build an index snapshot"
)
index_parser.add_argument("--corpus", required=True)
index_parser.add_argument("--out", required=True)
index_parser.set_defaults(func=build)

search_parser = subparsers.add_parser("search", parents=[common], help="BM25 search")
search_parser.add_argument("--index", required=True)
add_query_arguments(search_parser)
search_parser.add_argument("--n", type=int, default=10)
search_parser.add_argument("--json", action="store_true", help="print a RankedList")
search_parser.set_defaults(func=search)

expand_parser = subparsers.add_parser(
    "expand", parents=[common], help="expand one query"
)
add_query_arguments(expand_parser)
expand_parser.add_argument("--variant", required=True)
expand_parser.add_argument(
    "--mode", choices=[m.value for m in QEMode], default=QEMode.CONCAT.value
)
expand_parser.set_defaults(func=expand)

rerank_parser = subparsers.add_parser(
    "rerank", parents=[common], help="re-rank a candidate list"
)
rerank_parser.add_argument(
    "--candidates", required=True, help="RankedList JSON, as search --json prints"
)
rerank_parser.add_argument("--corpus", required=True)
add_query_arguments(rerank_parser)
rerank_parser.add_argument("--variant", required=True)
rerank_parser.add_argument("--k", type=int, default=100)
rerank_parser.add_argument("--window", type=int, default=20)
rerank_parser.add_argument("--stride", type=int, default=10)
rerank_parser.set_defaults(func=rerank)

run_parser = subparsers.add_parser(
    "run", parents=[common], help="evaluate one configuration"
)
run_parser.add_argument("--config", required=True, help="PipelineConfig JSON")
add_dataset_arguments(run_parser)
run_parser.add_argument("--out", help="directory for run.json and results.jsonl")
run_parser.set_defaults(func=run_one)

sweep_parser = subparsers.add_parser(
    "sweep", parents=[common], help="evaluate a grid of configurations"
)
sweep_parser.add_argument("--grid", required=True, help="sweep grid JSON")
sweep_parser.add_argument("--store", required=True, help="run store directory")
sweep_parser.add_argument("--resume", action="store_true")
add_dataset_arguments(sweep_parser)
sweep_parser.set_defaults(func=run_grid)

report_parser = subparsers.add_parser(
    "report", parents=[common], help="tables from a run store"
)
report_parser.add_argument("--store", required=True)
report_parser.add_argument("--shape", required=True, choices=report.SHAPES)
report_parser.add_argument("--out", required=True)
report_parser.add_argument("--rows", help="comma separated axis values, in order")
report_parser.set_defaults(func=emit)


def main(argv):
    try:
        options = parser.parse_args(argv)
        cfg = config.load_config(options, os.environ)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_INVALID
        return exc.code or EXIT_OK

    options.command_line = shlex.join(["rrpipe"] + list(argv))
    configure_logging(cfg, options.verbose, options.command_line)
    logger.debug("Running %s", options.command_line)

    try:
        options.func(options, cfg)
    except VALIDATION_ERRORS as exc:
        # summarise exception to users
        logger.info(exc)
        # log full exception to debug
        logger.debug(f"{exc}", exc_info=True)
        return EXIT_INVALID
    except Exception as exc:
        logger.info(exc)
        logger.debug(f"{exc}", exc_info=True)
        return EXIT_FAILED
    return EXIT_OK


def run():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
