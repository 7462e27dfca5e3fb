"""Corpus-level metrics and per-strategy comparison reports.

Token reduction is computed over summed tokens (corpus totals), not as a
mean of per-record ratios. Token utility divides the accuracy gain over the
cheap-only baseline by the fraction of expensive-model tokens actually
spent; it is undefined when no tokens were spent at all (reduction = 1).
Accuracy units pass through: feed fractions to get a fraction, feed
percentage points to get percentage points.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .conformal import PredictionSet
from .dataset import MCQRecord
from .errors import ConformalRouterError, DataError, ValidationError
from .routing import RoutingDecision, Target


class UndefinedTokenUtility(ConformalRouterError):
    """Token utility has no value when the token reduction ratio is 1."""


@dataclass(frozen=True)
class PerRecordOutcome:
    record_id: str
    target: Target
    correct: bool
    tokens_charged: int


@dataclass(frozen=True)
class EvaluationReport:
    """All metrics for one strategy on one corpus.

    ``u_token`` and ``apss`` may be ``None``: utility is undefined at
    reduction 1, and average set size only exists for set-based routing.
    """

    strategy: str
    acc: float
    trr: float
    u_token: float | None
    apss: float | None
    escalation_rate: float
    per_record: tuple[PerRecordOutcome, ...]


def _records_by_id(records: Sequence[MCQRecord]) -> Mapping[str, MCQRecord]:
    return {record.id: record for record in records}


def accuracy(decisions: Sequence[RoutingDecision], records: Sequence[MCQRecord]) -> float:
    """Fraction of decisions whose answer equals the record's gold label."""
    if not decisions:
        raise ValidationError("accuracy needs at least one decision")
    by_id = _records_by_id(records)
    correct = 0
    for decision in decisions:
        record = by_id[decision.record_id]
        if record.gold is None:
            raise DataError(f"record {record.id!r} has no gold label")
        correct += decision.answer == record.gold
    return correct / len(decisions)


def token_reduction_ratio(
    decisions: Sequence[RoutingDecision], records: Sequence[MCQRecord]
) -> float:
    """1 minus charged tokens over the expensive-only token total.

    Negative values are legal (routing overhead can exceed the savings) and
    are returned unclamped.
    """
    if not decisions:
        raise ValidationError("token_reduction_ratio needs at least one decision")
    by_id = _records_by_id(records)
    charged = 0
    expensive = 0
    for decision in decisions:
        record = by_id[decision.record_id]
        if record.expensive_tokens is None:
            raise DataError(
                f"record {record.id!r} has no expensive token count; cannot compute reduction"
            )
        charged += decision.tokens_charged
        expensive += record.expensive_tokens
    if expensive == 0:
        raise DataError("expensive token total is zero; reduction is undefined")
    return 1.0 - charged / expensive


def token_utility(acc: float, acc_cheap: float, trr: float) -> float:
    """Accuracy gain over the cheap baseline per unit of token usage.

    ``(acc - acc_cheap) / (1 - trr)``; raises
    :class:`UndefinedTokenUtility` when ``trr`` is 1 (no tokens spent).
    """
    if trr >= 1.0:
        raise UndefinedTokenUtility(f"token utility undefined at trr={trr!r}")
    return (acc - acc_cheap) / (1.0 - trr)


def apss(sets: Sequence[PredictionSet | int]) -> float:
    """Arithmetic mean prediction-set size; accepts sets or raw sizes."""
    if not sets:
        raise ValidationError("apss needs at least one prediction set")
    sizes = [s.size if isinstance(s, PredictionSet) else int(s) for s in sets]
    return sum(sizes) / len(sizes)


def evaluate_strategy(
    strategy: str,
    decisions: Sequence[RoutingDecision],
    records: Sequence[MCQRecord],
    acc_cheap: float,
    set_sizes: Sequence[int] | None = None,
) -> EvaluationReport:
    """Assemble the full report for one strategy's decisions.

    ``acc_cheap`` must be the cheap-only accuracy on the same records,
    computed in the same run, so that token utility is internally
    consistent.
    """
    by_id = _records_by_id(records)
    acc = accuracy(decisions, records)
    trr = token_reduction_ratio(decisions, records)
    try:
        utility = token_utility(acc, acc_cheap, trr)
    except UndefinedTokenUtility:
        utility = None
    per_record = tuple(
        PerRecordOutcome(
            record_id=d.record_id,
            target=d.target,
            correct=d.answer == by_id[d.record_id].gold,
            tokens_charged=d.tokens_charged,
        )
        for d in decisions
    )
    escalated = sum(1 for d in decisions if d.target is Target.EXPENSIVE)
    return EvaluationReport(
        strategy=strategy,
        acc=acc,
        trr=trr,
        u_token=utility,
        apss=apss(set_sizes) if set_sizes is not None else None,
        escalation_rate=escalated / len(decisions),
        per_record=per_record,
    )


def display_percent(value: float | None) -> str:
    """Percentage rounded half-up to one decimal, for table display only."""
    if value is None:
        return "-"
    return str(Decimal(repr(value * 100.0)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def compare(reports: Sequence[EvaluationReport]) -> list[dict]:
    """Comparison rows (one per strategy), in input order.

    ``raw`` holds the unrounded values; ``display`` the half-up one-decimal
    percentages used in tables (APSS stays a plain number).
    """
    rows = []
    for report in reports:
        rows.append(
            {
                "strategy": report.strategy,
                "raw": {
                    "acc": report.acc,
                    "trr": report.trr,
                    "u_token": report.u_token,
                    "apss": report.apss,
                    "escalation_rate": report.escalation_rate,
                },
                "display": {
                    "acc": display_percent(report.acc),
                    "trr": display_percent(report.trr),
                    "u_token": display_percent(report.u_token),
                    "apss": "-" if report.apss is None else f"{report.apss:.2f}",
                    "escalation_rate": display_percent(report.escalation_rate),
                },
            }
        )
    return rows


def write_report_csv(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    """Table emission: one display-rounded row per strategy."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "acc", "trr", "u_token", "apss", "escalation_rate"])
        for row in compare(reports):
            d = row["display"]
            writer.writerow(
                [row["strategy"], d["acc"], d["trr"], d["u_token"], d["apss"], d["escalation_rate"]]
            )


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "strategy": report.strategy,
        "acc": report.acc,
        "trr": report.trr,
        "u_token": report.u_token,
        "apss": report.apss,
        "escalation_rate": report.escalation_rate,
        "per_record": [
            {
                "id": o.record_id,
                "target": o.target.value,
                "correct": o.correct,
                "tokens_charged": o.tokens_charged,
            }
            for o in report.per_record
        ],
    }


def write_report_json(
    reports: Sequence[EvaluationReport],
    path: str | Path,
    metadata: Mapping | None = None,
) -> None:
    """Full-fidelity emission: raw values plus the per-record trace."""
    payload = dict(metadata or {})
    payload["strategies"] = [report_to_dict(r) for r in reports]
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_table(reports: Sequence[EvaluationReport]) -> str:
    """Plain-text comparison table for terminal output."""
    header = ["strategy", "acc", "trr", "u_token", "apss", "escalation"]
    rows = [
        [
            row["strategy"],
            row["display"]["acc"],
            row["display"]["trr"],
            row["display"]["u_token"],
            row["display"]["apss"],
            row["display"]["escalation_rate"],
        ]
        for row in compare(reports)
    ]
    widths = [max(len(str(cell)) for cell in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)
