"""CSV and Markdown tables from run records.

Metrics render to 2 decimals and costs to at most 4, the precision the
published tables use.
"""
import csv
import logging
from decimal import Decimal
from pathlib import Path

from rrpipe.metrics import aggregate
from rrpipe.schema import OFF, InvalidArgument

logger = logging.getLogger(__name__)

SHAPES = ("qe_table", "rr_table", "depth_curve")
COST_PLACES = Decimal("0.0001")
BASELINE_LABEL = "No Enhancement (BM25 only)"


class MissingAxis(Exception):
    pass


def format_metric(value):
    return f"{value:.2f}"


def format_cost(cost):
    if cost == 0:
        # no LLM spend at all
        return "0.000"
    whole, _, fraction = format(Decimal(cost).quantize(COST_PLACES), "f").partition(".")
    return f"{whole}.{fraction.rstrip('0').ljust(2, '0')}"


def qe_label(record):
    variant = record.config.qe_variant
    return BASELINE_LABEL if variant == OFF else variant


def rr_label(record):
    config = record.config
    return f"QE ({config.qe_variant}) + RR ({config.rr_variant})"


def _select(records, key, rows):
    """First record per axis value, in the requested order."""
    by_key = {}
    for record in records:
        by_key.setdefault(key(record), record)
    if rows is None:
        return list(by_key.values())
    missing = [row for row in rows if row not in by_key]
    if missing:
        raise MissingAxis(f"No run record for: {', '.join(map(str, missing))}")
    return [by_key[row] for row in rows]


def markdown_table(header, rows):
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|",
    ]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    with path.open("w", encoding="utf8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _qe_table(records, rows):
    selected = _select(records, lambda r: r.config.qe_variant, rows)
    header = ["Model Variant", "NDCG@10", "Recall@10", "Cost ($/query)"]
    markdown = [
        [
            qe_label(r),
            format_metric(r.aggregate.ndcg_at_10),
            format_metric(r.aggregate.recall_at_10),
            format_cost(r.aggregate.cost),
        ]
        for r in selected
    ]
    machine = [
        [
            r.config.qe_variant,
            r.aggregate.ndcg_at_10,
            r.aggregate.recall_at_10,
            r.aggregate.cost,
        ]
        for r in selected
    ]
    csv_header = ["qe_variant", "ndcg_at_10", "recall_at_10", "cost"]
    return selected, qe_label, header, markdown, csv_header, machine


def _rr_table(records, rows):
    selected = _select(records, lambda r: r.config.rr_variant, rows)
    header = [
        "Configuration",
        "NDCG@10",
        "Recall@10",
        "Cost ($/query)",
        "Latency (s/query)",
    ]
    markdown = [
        [
            rr_label(r),
            format_metric(r.aggregate.ndcg_at_10),
            format_metric(r.aggregate.recall_at_10),
            format_cost(r.aggregate.cost),
            format_metric(r.aggregate.latency),
        ]
        for r in selected
    ]
    machine = [
        [
            r.config.qe_variant,
            r.config.rr_variant,
            r.config.k,
            r.aggregate.ndcg_at_10,
            r.aggregate.recall_at_10,
            r.aggregate.cost,
            r.aggregate.latency,
        ]
        for r in selected
    ]
    csv_header = [
        "qe_variant",
        "rr_variant",
        "k",
        "ndcg_at_10",
        "recall_at_10",
        "cost",
        "latency",
    ]
    return selected, rr_label, header, markdown, csv_header, machine


def _depth_curve(records, rows):
    selected = _select(records, lambda r: (r.config.qe_variant, r.config.k), None)
    variants = list(dict.fromkeys(r.config.qe_variant for r in selected))
    if rows is not None:
        missing = [row for row in rows if row not in variants]
        if missing:
            raise MissingAxis(f"No run record for: {', '.join(missing)}")
        variants = list(rows)
    selected = [r for r in selected if r.config.qe_variant in variants]
    selected.sort(key=lambda r: (variants.index(r.config.qe_variant), r.config.k))

    depths = sorted({r.config.k for r in selected})
    cells = {(r.config.qe_variant, r.config.k): r for r in selected}
    header = ["QE variant"] + [f"k={k}" for k in depths]
    markdown = []
    for variant in variants:
        row = [BASELINE_LABEL if variant == OFF else variant]
        for k in depths:
            record = cells.get((variant, k))
            row.append(format_metric(record.aggregate.ndcg_at_10) if record else "-")
        markdown.append(row)
    machine = [
        [r.config.qe_variant, r.config.k, r.aggregate.ndcg_at_10] for r in selected
    ]
    csv_header = ["qe_variant", "k", "ndcg_at_10"]

    def label(record):
        return f"{record.config.qe_variant} k={record.config.k}"

    return selected, label, header, markdown, csv_header, machine


BUILDERS = {"qe_table": _qe_table, "rr_table": _rr_table, "depth_curve": _depth_curve}


def subset_rows(selected, label):
    rows = []
    for record in selected:
        subsets = sorted({r.subset for r in record.per_query})
        for subset in subsets:
            row = aggregate([r for r in record.per_query if r.subset == subset])
            rows.append(
                [
                    label(record),
                    subset,
                    row.ndcg_at_10,
                    row.recall_at_10,
                    row.cost,
                    row.latency,
                    row.count,
                ]
            )
    return rows


def emit_report(records, shape, out_dir, rows=None):
    """Write report_<shape>.csv, report_<shape>.md and the per-subset CSV.

    ``rows`` names the axis values that must appear, in order: QE variants
    for qe_table and depth_curve, RR variants for rr_table.
    """
    if shape not in BUILDERS:
        raise InvalidArgument(
            f"Unknown report shape {shape!r}, expected one of {SHAPES}"
        )
    if not records:
        raise MissingAxis("No run records to report")

    selected, label, header, markdown, csv_header, machine = BUILDERS[shape](
        records, rows
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths = [
        write_csv(out_dir / f"report_{shape}.csv", csv_header, machine),
        out_dir / f"report_{shape}.md",
        write_csv(
            out_dir / f"report_{shape}_subsets.csv",
            ["row", "subset", "ndcg_at_10", "recall_at_10", "cost", "latency", "count"],
            subset_rows(selected, label),
        ),
    ]
    paths[1].write_text(markdown_table(header, markdown), encoding="utf8")
    logger.info("Wrote %s report with %s rows to %s", shape, len(markdown), out_dir)
    return paths
