"""In-memory BM25 inverted index for the initial retrieval stage."""
import heapq
import json
import logging
import math
import struct
import zlib
from collections import Counter, defaultdict
from pathlib import Path

from rrpipe.analysis import STOPWORDS_VERSION, Analyzer, tokenize
from rrpipe.schema import (
    Bm25Params,
    InvalidArgument,
    Provenance,
    RankedEntry,
    RankedList,
)

logger = logging.getLogger(__name__)

MAGIC = b"RRPIPE-IDX"
FORMAT_VERSION = 1
HEADER = struct.Struct(">I")


class EmptyCorpus(Exception):
    pass


class IndexFormatError(Exception):
    pass


def idf(doc_count, df):
    """Non-negative (Lucene) form, > 0 for every df in [1, N]."""
    return math.log((doc_count - df + 0.5) / (df + 0.5) + 1)


def term_score(idf_value, tf, doc_length, avg_doc_length, k1, b):
    norm = k1 * (1 - b + b * doc_length / avg_doc_length)
    return idf_value * (tf * (k1 + 1)) / (tf + norm)


class Bm25Index:
    """Immutable after build, so concurrent searches can share one instance."""

    def __init__(self, postings, doc_lengths, doc_ids, params, analyzer):
        self.postings = postings
        self.doc_lengths = list(doc_lengths)
        self.doc_ids = list(doc_ids)
        self.doc_count = len(self.doc_ids)
        self.avg_doc_length = (
            sum(self.doc_lengths) / self.doc_count if self.doc_count else 0.0
        )
        self.params = params
        self.analyzer = analyzer

    def df(self, term):
        return len(self.postings.get(term, ()))

    def idf(self, term):
        return idf(self.doc_count, self.df(term))

    def analyze(self, text):
        return self.analyzer(text)


def build_index(corpus, params=None, analyzer=tokenize):
    if not len(corpus):
        raise EmptyCorpus("Cannot index an empty corpus")
    params = params or Bm25Params()

    postings = {}
    doc_lengths = []
    doc_ids = []
    for ordinal, document in enumerate(corpus):
        terms = analyzer(document.text)
        doc_ids.append(document.doc_id)
        doc_lengths.append(len(terms))
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((ordinal, tf))

    index = Bm25Index(postings, doc_lengths, doc_ids, params, analyzer)
    logger.info(
        "Indexed %s documents, %s terms, avg length %.1f",
        index.doc_count,
        len(postings),
        index.avg_doc_length,
    )
    return index


def bm25_search(index, query_terms, n, params=None, query_id=""):
    """Top-n documents by BM25; documents without term overlap are left out.

    ``params`` overrides the index's (k1, b) so one index serves a whole sweep.
    """
    if n < 1:
        raise InvalidArgument(f"n must be positive, got {n}")
    params = params or index.params
    k1, b = params.k1, params.b

    scores = defaultdict(float)
    for term in query_terms:
        term_postings = index.postings.get(term)
        if not term_postings:
            continue
        idf_value = idf(index.doc_count, len(term_postings))
        for ordinal, tf in term_postings:
            scores[ordinal] += term_score(
                idf_value, tf, index.doc_lengths[ordinal], index.avg_doc_length, k1, b
            )

    top = heapq.nsmallest(
        n,
        ((score, index.doc_ids[ordinal]) for ordinal, score in scores.items()),
        key=lambda item: (-item[0], item[1]),
    )
    return RankedList(
        query_id=query_id,
        entries=[RankedEntry(doc_id=doc_id, score=score) for score, doc_id in top],
        provenance=Provenance.INITIAL_RETRIEVAL,
    )


def search_text(index, text, n, params=None, query_id=""):
    return bm25_search(index, index.analyze(text), n, params=params, query_id=query_id)


def save_index(index, path):
    """Write a snapshot: magic, format version, then zlib'd JSON."""
    body = {
        "doc_ids": index.doc_ids,
        "doc_lengths": index.doc_lengths,
        "params": index.params.dict(),
        "analyzer": index.analyzer.settings(),
        "postings": {
            term: [list(p) for p in ps] for term, ps in index.postings.items()
        },
    }
    data = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(HEADER.pack(FORMAT_VERSION))
        f.write(zlib.compress(data))
    return path


def load_index(path):
    path = Path(path)
    if not path.exists():
        raise IndexFormatError(f"Index snapshot does not exist: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise IndexFormatError(f"{path} is not an index snapshot")
    offset = len(MAGIC)
    try:
        (version,) = HEADER.unpack_from(raw, offset)
    except struct.error:
        raise IndexFormatError(f"{path} is truncated")
    if version != FORMAT_VERSION:
        raise IndexFormatError(
            f"{path} has format version {version}, expected {FORMAT_VERSION}"
        )
    try:
        body = json.loads(zlib.decompress(raw[offset + HEADER.size :]))
    except (zlib.error, json.JSONDecodeError) as exc:
        raise IndexFormatError(f"Could not read {path} - {exc}")

    settings = body["analyzer"]
    if settings.pop("stopwords") != STOPWORDS_VERSION:
        raise IndexFormatError(f"{path} was built with a different stopword list")

    postings = {
        term: [tuple(p) for p in ps] for term, ps in body["postings"].items()
    }
    return Bm25Index(
        postings,
        body["doc_lengths"],
        body["doc_ids"],
        Bm25Params(**body["params"]),
        Analyzer(**settings),
    )
