"""On-disk formats for documents, queries and relevance judgments.

Documents and queries are JSON lines; qrels are whitespace separated
``query_id doc_id grade`` triples, as trec_eval reads them.
"""
import json
import logging
from pathlib import Path

from pydantic import ValidationError

from rrpipe.schema import Document, Query

logger = logging.getLogger(__name__)


class CorpusError(Exception):
    pass


class MissingFile(CorpusError):
    pass


class MalformedRecord(CorpusError):
    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: malformed record - {reason}")


class DuplicateDocId(CorpusError):
    def __init__(self, doc_id):
        self.doc_id = doc_id
        super().__init__(f"Duplicate doc_id {doc_id!r}")


class DuplicateQueryId(CorpusError):
    def __init__(self, query_id):
        self.query_id = query_id
        super().__init__(f"Duplicate query_id {query_id!r}")


class NegativeGrade(CorpusError):
    pass


class Corpus:
    """Documents in file order, looked up by doc_id."""

    def __init__(self, documents):
        self._documents = tuple(documents)
        self._by_id = {}
        for document in self._documents:
            if document.doc_id in self._by_id:
                raise DuplicateDocId(document.doc_id)
            self._by_id[document.doc_id] = document

    def __len__(self):
        return len(self._documents)

    def __iter__(self):
        return iter(self._documents)

    def __getitem__(self, doc_id):
        return self._by_id[doc_id]

    def __contains__(self, doc_id):
        return doc_id in self._by_id

    def __eq__(self, other):
        return isinstance(other, Corpus) and self._documents == other._documents


class QuerySet:
    def __init__(self, queries):
        self._queries = tuple(queries)
        self._by_id = {}
        for query in self._queries:
            if query.query_id in self._by_id:
                raise DuplicateQueryId(query.query_id)
            self._by_id[query.query_id] = query

    def __len__(self):
        return len(self._queries)

    def __iter__(self):
        return iter(self._queries)

    def __getitem__(self, query_id):
        return self._by_id[query_id]

    def __contains__(self, query_id):
        return query_id in self._by_id

    def __eq__(self, other):
        return isinstance(other, QuerySet) and self._queries == other._queries


class Qrels:
    """Graded judgments, query_id -> {doc_id: grade}."""

    def __init__(self, judgments, warnings=()):
        self._judgments = {q: dict(docs) for q, docs in judgments.items()}
        self.warnings = list(warnings)

    @property
    def judgments(self):
        return self._judgments

    def get(self, query_id):
        return dict(self._judgments.get(query_id, {}))

    def __contains__(self, query_id):
        return query_id in self._judgments

    def __len__(self):
        return len(self._judgments)


def _read_lines(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"File does not exist: {path}")
    with path.open(encoding="utf8") as f:
        for number, line in enumerate(f, start=1):
            if line.strip():
                yield number, line


def read_records(path, model):
    for number, line in _read_lines(path):
        try:
            yield model.parse_obj(json.loads(line))
        except (json.JSONDecodeError, ValidationError, TypeError) as exc:
            raise MalformedRecord(path, number, exc)


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf8") as f:
        for record in records:
            f.write(record.json() + "\n")
    return path


def load_corpus(path):
    corpus = Corpus(read_records(path, Document))
    logger.debug("Loaded %s documents from %s", len(corpus), path)
    return corpus


def write_corpus(path, corpus):
    return write_records(path, corpus)


def load_queries(path):
    queries = QuerySet(read_records(path, Query))
    logger.debug("Loaded %s queries from %s", len(queries), path)
    return queries


def write_queries(path, queries):
    return write_records(path, queries)


def filter_subsets(queries, subsets):
    """Keep only queries in the named subsets; no subsets means all."""
    if not subsets:
        return queries
    subsets = set(subsets)
    return QuerySet(q for q in queries if q.subset in subsets)


def load_qrels(path, queries):
    judgments = {}
    warnings = []
    for number, line in _read_lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise MalformedRecord(path, number, f"expected 3 fields, got {len(parts)}")
        query_id, doc_id, grade = parts
        try:
            grade = int(grade)
        except ValueError:
            raise MalformedRecord(path, number, f"grade {grade!r} is not an integer")
        if grade < 0:
            raise NegativeGrade(f"{path}:{number}: negative grade {grade}")
        if query_id not in queries:
            warning = f"{path}:{number}: unknown query_id {query_id!r}, skipped"
            logger.warning(warning)
            warnings.append(warning)
            continue
        judgments.setdefault(query_id, {})[doc_id] = grade

    return Qrels(judgments, warnings)


def write_qrels(path, qrels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf8") as f:
        for query_id, docs in qrels.judgments.items():
            for doc_id, grade in docs.items():
                f.write(f"{query_id} {doc_id} {grade}\n")
    return path


def convert_bright(documents_path, examples_path, subset):
    """Read one BRIGHT subset exported as JSON lines.

    Document rows are ``{id, content}``; example rows are
    ``{id, query, gold_ids}``. Every gold id becomes a grade 1 judgment.
    """
    documents = []
    for number, line in _read_lines(documents_path):
        try:
            row = json.loads(line)
            documents.append(
                Document(doc_id=str(row["id"]), subset=subset, text=row["content"])
            )
        except (json.JSONDecodeError, KeyError, ValidationError) as exc:
            raise MalformedRecord(documents_path, number, exc)

    queries = []
    judgments = {}
    for number, line in _read_lines(examples_path):
        try:
            row = json.loads(line)
            query = Query(query_id=str(row["id"]), subset=subset, text=row["query"])
            gold_ids = [str(doc_id) for doc_id in row.get("gold_ids", [])]
        except (json.JSONDecodeError, KeyError, ValidationError) as exc:
            raise MalformedRecord(examples_path, number, exc)
        queries.append(query)
        judgments[query.query_id] = {doc_id: 1 for doc_id in gold_ids}

    return Corpus(documents), QuerySet(queries), Qrels(judgments)
