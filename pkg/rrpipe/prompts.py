import hashlib
from functools import lru_cache
from pathlib import Path
from string import Template

RESOURCES = Path(__file__).parent / "resources"

QE_TEMPLATE = "qe-v1"
RR_TEMPLATE = "rr-v1"


@lru_cache(maxsize=None)
def load_template(template_id):
    return (RESOURCES / f"{template_id}.txt").read_text(encoding="utf8")


def template_hashes():
    """sha256 of each template, recorded in every PipelineConfig."""
    return {
        "qe": hashlib.sha256(load_template(QE_TEMPLATE).encode("utf8")).hexdigest(),
        "rr": hashlib.sha256(load_template(RR_TEMPLATE).encode("utf8")).hexdigest(),
    }


def render_expansion(query_text):
    return Template(load_template(QE_TEMPLATE)).substitute(query=query_text)


def render_rerank(query_text, passages):
    """Number passages from 1, as the parser expects."""
    lines = "\n".join(f"[{i}] {text}" for i, text in enumerate(passages, start=1))
    return Template(load_template(RR_TEMPLATE)).substitute(
        query=query_text, count=len(passages), passages=lines
    )
