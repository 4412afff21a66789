"""Records shared by every stage of the pipeline.

Everything that is written to disk, or handed between modules, is one of these
pydantic models, so a file that loads is a file that satisfies the invariants.
"""
from datetime import datetime
from decimal import Decimal
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, PositiveInt, root_validator, validator

from rrpipe import prompts

OFF = "off"


class InvalidArgument(ValueError):
    """An argument outside what the operation accepts."""


class Record(BaseModel):
    class Config:
        # do not allow anyone to set values after instantiation
        allow_mutation = False
        json_encoders = {Decimal: str}


class Document(Record):
    doc_id: str
    subset: str = ""
    text: str

    @validator("doc_id")
    def check_doc_id(cls, doc_id):
        if not doc_id:
            raise ValueError("doc_id must not be empty")
        return doc_id

    @validator("text")
    def check_text(cls, text):
        if not text.strip():
            raise ValueError("text must not be blank")
        return text


class Query(Record):
    query_id: str
    subset: str = ""
    text: str

    @validator("query_id")
    def check_query_id(cls, query_id):
        if not query_id:
            raise ValueError("query_id must not be empty")
        return query_id


class Thinking(str, Enum):
    OFF = "off"
    DYNAMIC = "dynamic"


class Stage(str, Enum):
    QE = "qe"
    RR = "rr"


class ModelVariant(Record):
    """A named LLM configuration and what it costs per million tokens."""

    name: str
    provider_id: str
    thinking: Thinking = Thinking.OFF
    price_in: Decimal = Field(ge=0)  # $ per 1e6 input tokens
    price_out: Decimal = Field(ge=0)  # $ per 1e6 output tokens
    max_context_tokens: PositiveInt
    model: Optional[str] = None  # provider's model id, defaults to name

    @property
    def model_id(self):
        return self.model or self.name


class UsageRecord(Record):
    variant_name: str
    input_tokens: int = Field(ge=0)
    output_tokens: int = Field(ge=0)  # includes thinking tokens
    latency: float = Field(ge=0)  # seconds
    stage: Stage
    query_id: str
    estimated: bool = False  # token counts came from the fallback estimator


class Provenance(str, Enum):
    INITIAL_RETRIEVAL = "initial_retrieval"
    RERANKED = "reranked"


class RankedEntry(Record):
    doc_id: str
    score: float


class RankedList(Record):
    query_id: str
    entries: List[RankedEntry] = []
    provenance: Provenance = Provenance.INITIAL_RETRIEVAL

    @validator("entries")
    def check_entries(cls, entries, values):
        doc_ids = [e.doc_id for e in entries]
        if len(set(doc_ids)) != len(doc_ids):
            raise ValueError("duplicate doc_id in ranked list")
        return entries

    @root_validator(skip_on_failure=True)
    def check_order(cls, values):
        if values["provenance"] == Provenance.INITIAL_RETRIEVAL:
            keys = [(-e.score, e.doc_id) for e in values["entries"]]
            if keys != sorted(keys):
                raise ValueError("initial retrieval must be sorted by score, doc_id")
        return values

    @property
    def doc_ids(self):
        return [e.doc_id for e in self.entries]

    def truncate(self, n):
        return self.copy(update={"entries": self.entries[:n]})


class QEMode(str, Enum):
    CONCAT = "concat"
    REPLACE = "replace"
    OFF = "off"


class ExpandedQuery(Record):
    query_id: str
    original_text: str
    expansion_text: str = ""
    retrieval_text: str
    mode: QEMode
    usage: Optional[UsageRecord] = None
    degraded: bool = False


class Permutation(Record):
    """0-based candidate indices, best first."""

    order: List[int]
    repaired: bool = False
    degraded: bool = False
    truncated: int = 0  # passages cut to the per-document budget

    @validator("order")
    def check_order(cls, order):
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"not a permutation: {order}")
        return order

    @classmethod
    def identity(cls, k, **kwargs):
        return cls(order=list(range(k)), **kwargs)


class Gain(str, Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"


class Bm25Params(Record):
    k1: float = Field(1.2, ge=0)
    b: float = Field(0.75, ge=0, le=1)


def default_template_hashes():
    return prompts.template_hashes()


class PipelineConfig(Record):
    """One cell of the ablation grid."""

    qe_variant: str = OFF
    qe_mode: QEMode = QEMode.CONCAT
    rr_variant: str = OFF
    k: PositiveInt = 100
    window: PositiveInt = 20
    stride: PositiveInt = 10
    bm25: Bm25Params = Bm25Params()
    initial_n: Optional[PositiveInt] = None
    seed: int = 0
    max_passage_tokens: PositiveInt = 300
    gain: Gain = Gain.LINEAR
    template_hashes: Dict[str, str] = Field(default_factory=default_template_hashes)

    @root_validator(skip_on_failure=True)
    def check_axes(cls, values):
        if values["qe_variant"] == OFF or values["qe_mode"] == QEMode.OFF:
            values["qe_variant"] = OFF
            values["qe_mode"] = QEMode.OFF
        if values["initial_n"] is None:
            values["initial_n"] = max(100, values["k"])
        if values["k"] > values["initial_n"]:
            raise ValueError(
                f"k={values['k']} exceeds initial_n={values['initial_n']}"
            )
        if values["stride"] > values["window"]:
            raise ValueError(
                f"stride={values['stride']} exceeds window={values['window']}"
            )
        return values

    @property
    def reranks(self):
        return self.rr_variant != OFF


class QueryResult(Record):
    query_id: str
    subset: str = ""
    ndcg_at_10: float = Field(ge=0, le=1)
    recall_at_10: float = Field(ge=0, le=1)
    cost: Decimal = Field(ge=0)  # dollars
    latency: float = Field(ge=0)  # seconds
    degraded: bool = False
    judged: bool = True  # false when the query has no relevant documents
    input_tokens: int = 0
    output_tokens: int = 0
    llm_calls: int = 0


class AggregateRow(Record):
    """Means over a run; metrics are scaled to 0-100."""

    ndcg_at_10: float
    recall_at_10: float
    cost: Decimal
    latency: float
    count: int
    degraded: int
    excluded: int


class RunRecord(Record):
    config: PipelineConfig
    config_hash: str
    per_query: List[QueryResult]
    aggregate: AggregateRow
    started_at: datetime
    finished_at: datetime
    toolkit_version: str
    command: Optional[str] = None

    @root_validator(skip_on_failure=True)
    def check_aggregate(cls, values):
        # avoid circular import
        from rrpipe.metrics import aggregate

        if not values["per_query"]:
            raise ValueError("a run record needs per-query results")
        if aggregate(values["per_query"]) != values["aggregate"]:
            raise ValueError("aggregate does not match the per-query results")
        return values


class ManifestEntry(Record):
    config_hash: str
    status: str  # "done" or "failed"
    record: Optional[str] = None
    error: Optional[str] = None


class RunManifest(Record):
    toolkit_version: str
    entries: List[ManifestEntry] = []

    def get(self, config_hash):
        for entry in self.entries:
            if entry.config_hash == config_hash:
                return entry
        return None


class SweepGrid(Record):
    """Axis values of an ablation sweep, expanded to their cross product."""

    qe_variants: List[str] = [OFF]
    qe_mode: QEMode = QEMode.CONCAT
    rr_variants: List[str] = [OFF]
    k: List[PositiveInt] = [100]
    window: PositiveInt = 20
    stride: PositiveInt = 10
    bm25: Bm25Params = Bm25Params()
    initial_n: Optional[PositiveInt] = None
    seed: int = 0
    max_passage_tokens: PositiveInt = 300
    gain: Gain = Gain.LINEAR
    include_baseline: bool = False

    @validator("qe_variants", "rr_variants", "k", pre=True)
    def listify(cls, value):
        if isinstance(value, (list, tuple)):
            return list(value)
        return [value]

    def expand(self):
        shared = dict(
            window=self.window,
            stride=self.stride,
            bm25=self.bm25,
            initial_n=self.initial_n,
            seed=self.seed,
            max_passage_tokens=self.max_passage_tokens,
            gain=self.gain,
        )
        configs = []
        if self.include_baseline:
            configs.append(PipelineConfig(k=min(self.k), **shared))
        for qe_variant in self.qe_variants:
            for rr_variant in self.rr_variants:
                for k in self.k:
                    config = PipelineConfig(
                        qe_variant=qe_variant,
                        qe_mode=self.qe_mode,
                        rr_variant=rr_variant,
                        k=k,
                        **shared,
                    )
                    if config not in configs:
                        configs.append(config)
        return configs
