"""Evaluation: confusion counts, micro/macro metrics, failure rate, reports.

Positive class is "met". Failed predictions are excluded from the
confusion counts entirely and surface only through failure_rate, whose
denominator is the full test size including failures. Macro metrics are
the unweighted mean of the two per-class metric values within one
subscale, with 0 filled in for a class whose metric is undefined.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping

from .subscales import SUBSCALES, GUIDELINES, Subscale


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise MetricsError(f"negative confusion count: {self}")

    @property
    def n_valid(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


@dataclass
class MetricSet:
    f1: float
    precision: float
    recall: float
    accuracy: float
    averaging: str  # "micro" or "macro"
    failure_rate: float
    n_total: int
    n_failures: int
    flags: list[str] = field(default_factory=list)  # zero-division fills


def _safe_div(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def confusion(
    predictions: Iterable[tuple[str, str]],
    gold: Mapping[str, bool],
) -> tuple[ConfusionCounts, int, int]:
    """Count (sentence_id, verdict) predictions against gold labels.

    verdict is "met", "not_met", or "failure". Returns (counts, n_failures,
    n_total); n_total includes failures, the counts do not.
    """
    tp = fp = fn = tn = failures = total = 0
    for sentence_id, verdict in predictions:
        if sentence_id not in gold:
            raise MetricsError(f"prediction for {sentence_id!r} has no gold label")
        total += 1
        if verdict == "failure":
            failures += 1
            continue
        if verdict not in ("met", "not_met"):
            raise MetricsError(f"unknown verdict {verdict!r} for {sentence_id!r}")
        predicted = verdict == "met"
        actual = gold[sentence_id]
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn), failures, total


def micro_metrics(counts: ConfusionCounts, n_failures: int, n_total: int) -> MetricSet:
    """Pooled-count metrics: P, R, F1 on the positive class plus accuracy."""
    flags: list[str] = []
    precision = _safe_div(counts.tp, counts.tp + counts.fp, "precision_zero_denominator", flags)
    recall = _safe_div(counts.tp, counts.tp + counts.fn, "recall_zero_denominator", flags)
    f1 = _safe_div(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn, "f1_zero_denominator", flags)
    accuracy = _safe_div(counts.tp + counts.tn, counts.n_valid, "accuracy_zero_denominator", flags)
    failure_rate = _safe_div(n_failures, n_total, "failure_rate_zero_denominator", flags)
    return MetricSet(
        f1=f1,
        precision=precision,
        recall=recall,
        accuracy=accuracy,
        averaging="micro",
        failure_rate=failure_rate,
        n_total=n_total,
        n_failures=n_failures,
        flags=flags,
    )


def macro_metrics(counts: ConfusionCounts, n_failures: int = 0, n_total: int | None = None) -> MetricSet:
    """Two-class unweighted mean within one subscale.

    The "not met" class reuses the same counts with roles swapped:
    its true positives are tn, its false positives are fn, its false
    negatives are fp. A class with an undefined metric contributes 0.
    """
    if n_total is None:
        n_total = counts.n_valid + n_failures
    flags: list[str] = []
    p_met = _safe_div(counts.tp, counts.tp + counts.fp, "met_precision_zero_denominator", flags)
    r_met = _safe_div(counts.tp, counts.tp + counts.fn, "met_recall_zero_denominator", flags)
    f_met = _safe_div(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn, "met_f1_zero_denominator", flags)
    p_not = _safe_div(counts.tn, counts.tn + counts.fn, "not_met_precision_zero_denominator", flags)
    r_not = _safe_div(counts.tn, counts.tn + counts.fp, "not_met_recall_zero_denominator", flags)
    f_not = _safe_div(2 * counts.tn, 2 * counts.tn + counts.fn + counts.fp, "not_met_f1_zero_denominator", flags)
    accuracy = _safe_div(counts.tp + counts.tn, counts.n_valid, "accuracy_zero_denominator", flags)
    failure_rate = _safe_div(n_failures, n_total, "failure_rate_zero_denominator", flags)
    return MetricSet(
        f1=(f_met + f_not) / 2,
        precision=(p_met + p_not) / 2,
        recall=(r_met + r_not) / 2,
        accuracy=accuracy,
        averaging="macro",
        failure_rate=failure_rate,
        n_total=n_total,
        n_failures=n_failures,
        flags=flags,
    )


def round_half_up(value: float, places: int = 4) -> float:
    """Presentation rounding; internal metric values keep full precision."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


# -- report emission -----------------------------------------------------------


@dataclass
class RunResult:
    """One evaluated (model, method) run: per-subscale counts plus failure
    tallies. The pooled micro row is always recomputed from these counts so
    the pooling identity cannot drift."""

    model: str
    method: str  # e.g. "SFT", "0-shot", "5-shot"
    subscale_counts: dict[Subscale, ConfusionCounts]
    subscale_failures: dict[Subscale, int]
    subscale_totals: dict[Subscale, int]

    def pooled(self) -> tuple[ConfusionCounts, int, int]:
        counts = ConfusionCounts()
        for subscale_count in self.subscale_counts.values():
            counts = counts + subscale_count
        return (
            counts,
            sum(self.subscale_failures.values()),
            sum(self.subscale_totals.values()),
        )


REPORT_COLUMNS = ("Model", "Methods", "F1", "Precision", "Recall", "Accuracy", "Failure Rate")


@dataclass
class Report:
    micro_rows: list[dict[str, object]]
    macro_rows: dict[Subscale, list[dict[str, object]]]
    flagged: bool  # any zero-division fill anywhere, for CI exit codes


def _metric_row(model: str, method: str, metrics: MetricSet) -> dict[str, object]:
    return {
        "Model": model,
        "Methods": method,
        "F1": round_half_up(metrics.f1),
        "Precision": round_half_up(metrics.precision),
        "Recall": round_half_up(metrics.recall),
        "Accuracy": round_half_up(metrics.accuracy),
        "Failure Rate": round_half_up(metrics.failure_rate),
    }


def emit_report(runs: list[RunResult]) -> Report:
    """One overall micro table plus one macro table per subscale.

    Asserts the pooling identity on every run: the pooled confusion counts
    must equal the component-wise sum of the four per-subscale counts.
    """
    if not runs:
        raise MetricsError("no completed runs to report")
    micro_rows = []
    macro_rows: dict[Subscale, list[dict[str, object]]] = {s: [] for s in SUBSCALES}
    flagged = False
    for run in runs:
        pooled_counts, pooled_failures, pooled_total = run.pooled()
        component_sum = ConfusionCounts()
        for subscale in SUBSCALES:
            component_sum = component_sum + run.subscale_counts.get(subscale, ConfusionCounts())
        if component_sum != pooled_counts:
            raise MetricsError(
                f"pooling identity violated for {run.model}/{run.method}: "
                f"{component_sum} != {pooled_counts}"
            )
        micro = micro_metrics(pooled_counts, pooled_failures, pooled_total)
        flagged = flagged or bool(micro.flags)
        micro_rows.append(_metric_row(run.model, run.method, micro))
        for subscale in SUBSCALES:
            if subscale not in run.subscale_counts:
                continue
            macro = macro_metrics(
                run.subscale_counts[subscale],
                run.subscale_failures.get(subscale, 0),
                run.subscale_totals.get(subscale),
            )
            flagged = flagged or bool(macro.flags)
            macro_rows[subscale].append(_metric_row(run.model, run.method, macro))
    return Report(micro_rows=micro_rows, macro_rows=macro_rows, flagged=flagged)


def report_to_csv(rows: list[dict[str, object]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({col: _format_cell(row[col]) for col in REPORT_COLUMNS})
    return buffer.getvalue()


def _format_cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report_to_text(report: Report) -> str:
    """Human-readable form: overall micro table then the four subscale
    macro tables."""
    sections = [("Overall (micro-averaged)", report.micro_rows)]
    for subscale in SUBSCALES:
        sections.append((GUIDELINES[subscale].display_name, report.macro_rows[subscale]))
    lines = []
    for title, rows in sections:
        lines.append(title)
        lines.append("-" * len(title))
        widths = {col: len(col) for col in REPORT_COLUMNS}
        formatted = [{col: _format_cell(r[col]) for col in REPORT_COLUMNS} for r in rows]
        for row in formatted:
            for col in REPORT_COLUMNS:
                widths[col] = max(widths[col], len(row[col]))
        lines.append("  ".join(col.ljust(widths[col]) for col in REPORT_COLUMNS))
        for row in formatted:
            lines.append("  ".join(row[col].ljust(widths[col]) for col in REPORT_COLUMNS))
        lines.append("")
    return "\n".join(lines)
