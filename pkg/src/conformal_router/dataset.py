"""Record schema, JSONL ingestion, splitting, and open-ended-QA conversion.

One JSON object per line, UTF-8, field names as in :class:`MCQRecord`.
Exactly one of ``cheap_logits`` / ``cheap_probs`` must be present; logits
are softmaxed at load time. Unknown fields survive a load/save round trip
untouched but are otherwise ignored.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .conformal import OptionDistribution, score, softmax_over_options
from .errors import DataError, ValidationError

EXPLICIT_FLAGS = ("keep", "escalate")

#: Text of the catch-all option appended when converting open-ended QA.
OTHERS_TEXT = "Others"

_RECORD_FIELDS = {
    "id",
    "question",
    "options",
    "gold",
    "cheap_logits",
    "cheap_probs",
    "cheap_answer",
    "cheap_tokens",
    "expensive_answer",
    "expensive_tokens",
    "samples",
    "explicit_flag",
}


@dataclass(frozen=True)
class MCQRecord:
    """One multiple-choice prompt with everything needed for offline replay.

    ``options`` is an ordered tuple of ``(label, text)`` pairs. ``gold`` may
    be absent for harvested live traffic; operations that need it (scoring,
    evaluation) raise :class:`DataError` when it is missing.
    """

    id: str
    options: tuple[tuple[str, str], ...]
    cheap_answer: str
    cheap_tokens: int
    gold: str | None = None
    question: str | None = None
    cheap_logits: tuple[float, ...] | None = None
    cheap_probs: tuple[float, ...] | None = None
    expensive_answer: str | None = None
    expensive_tokens: int | None = None
    samples: tuple[str, ...] | None = None
    explicit_flag: str | None = None
    extra: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("field 'id': must be a non-empty string")
        labels = tuple(label for label, _ in self.options)
        if len(set(labels)) != len(labels):
            raise ValidationError(f"field 'options': duplicate labels in {labels}")
        if (self.cheap_logits is None) == (self.cheap_probs is None):
            raise ValidationError(
                "fields 'cheap_logits'/'cheap_probs': exactly one must be present"
            )
        source_field = "cheap_probs" if self.cheap_probs is not None else "cheap_logits"
        try:
            dist = self._build_distribution()
        except ValidationError as exc:
            raise ValidationError(f"field {source_field!r}: {exc}") from None
        if self.gold is not None and self.gold not in labels:
            raise ValidationError(f"field 'gold': {self.gold!r} not among options {labels}")
        expected = dist.argmax_label()
        if self.cheap_answer != expected:
            raise ValidationError(
                f"field 'cheap_answer': {self.cheap_answer!r} is not the argmax {expected!r}"
            )
        if not isinstance(self.cheap_tokens, int) or self.cheap_tokens < 0:
            raise ValidationError("field 'cheap_tokens': must be a non-negative integer")
        if (self.expensive_answer is None) != (self.expensive_tokens is None):
            raise ValidationError(
                "fields 'expensive_answer'/'expensive_tokens': both or neither"
            )
        if self.expensive_tokens is not None and (
            not isinstance(self.expensive_tokens, int) or self.expensive_tokens < 0
        ):
            raise ValidationError("field 'expensive_tokens': must be a non-negative integer")
        if self.samples is not None:
            for s in self.samples:
                if s not in labels:
                    raise ValidationError(f"field 'samples': {s!r} not among options {labels}")
        if self.explicit_flag is not None and self.explicit_flag not in EXPLICIT_FLAGS:
            raise ValidationError(
                f"field 'explicit_flag': {self.explicit_flag!r} not in {EXPLICIT_FLAGS}"
            )
        object.__setattr__(self, "_dist", dist)

    def _build_distribution(self) -> OptionDistribution:
        labels = tuple(label for label, _ in self.options)
        if self.cheap_probs is not None:
            return OptionDistribution(labels=labels, probs=self.cheap_probs)
        probs = softmax_over_options(self.cheap_logits)
        return OptionDistribution(labels=labels, probs=tuple(float(p) for p in probs))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.options)

    def option_text(self, label: str) -> str:
        for lab, text in self.options:
            if lab == label:
                return text
        raise ValidationError(f"unknown option label {label!r}; have {self.labels}")

    def distribution(self) -> OptionDistribution:
        """Cheap-model probability distribution over this record's options."""
        return self._dist  # type: ignore[attr-defined]

    def gold_score(self) -> float:
        """Nonconformity score at the gold label."""
        if self.gold is None:
            raise DataError(f"record {self.id!r} has no gold label")
        return score(self.distribution(), self.gold)


def record_from_json(obj: dict, line_no: int | None = None) -> MCQRecord:
    """Validate one parsed JSON object into an :class:`MCQRecord`.

    Errors mention the offending field and, when given, the source line.
    """
    where = f"line {line_no}: " if line_no is not None else ""
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}each line must be a JSON object")
    raw_options = obj.get("options")
    if not isinstance(raw_options, list) or not raw_options:
        raise ValidationError(f"{where}field 'options': must be a non-empty list")
    options = []
    for entry in raw_options:
        if not isinstance(entry, dict) or "label" not in entry or "text" not in entry:
            raise ValidationError(
                f"{where}field 'options': entries must be objects with 'label' and 'text'"
            )
        options.append((str(entry["label"]), str(entry["text"])))
    extra = {k: v for k, v in obj.items() if k not in _RECORD_FIELDS}

    def opt_tuple(key, cast=float):
        value = obj.get(key)
        return None if value is None else tuple(cast(v) for v in value)

    try:
        return MCQRecord(
            id=str(obj.get("id", "")),
            question=obj.get("question"),
            options=tuple(options),
            gold=obj.get("gold"),
            cheap_logits=opt_tuple("cheap_logits"),
            cheap_probs=opt_tuple("cheap_probs"),
            cheap_answer=str(obj.get("cheap_answer", "")),
            cheap_tokens=obj.get("cheap_tokens", -1),
            expensive_answer=obj.get("expensive_answer"),
            expensive_tokens=obj.get("expensive_tokens"),
            samples=opt_tuple("samples", cast=str),
            explicit_flag=obj.get("explicit_flag"),
            extra=extra,
        )
    except ValidationError as exc:
        raise ValidationError(f"{where}{exc}") from None


def record_to_json(record: MCQRecord) -> dict:
    """Inverse of :func:`record_from_json`; omits absent optional fields."""
    obj: dict = {
        "id": record.id,
        "options": [{"label": lab, "text": text} for lab, text in record.options],
        "cheap_answer": record.cheap_answer,
        "cheap_tokens": record.cheap_tokens,
    }
    if record.question is not None:
        obj["question"] = record.question
    if record.gold is not None:
        obj["gold"] = record.gold
    if record.cheap_logits is not None:
        obj["cheap_logits"] = list(record.cheap_logits)
    if record.cheap_probs is not None:
        obj["cheap_probs"] = list(record.cheap_probs)
    if record.expensive_answer is not None:
        obj["expensive_answer"] = record.expensive_answer
        obj["expensive_tokens"] = record.expensive_tokens
    if record.samples is not None:
        obj["samples"] = list(record.samples)
    if record.explicit_flag is not None:
        obj["explicit_flag"] = record.explicit_flag
    obj.update(record.extra)
    return obj


def load_records(path: str | Path) -> list[MCQRecord]:
    """Load and validate a JSONL corpus.

    Raises :class:`ValidationError` with the line number on any schema
    violation, on duplicate ids, and on an empty file.
    """
    path = Path(path)
    records: list[MCQRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            record = record_from_json(obj, line_no=line_no)
            if record.id in seen:
                raise ValidationError(f"line {line_no}: duplicate record id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    if not records:
        raise ValidationError(f"{path}: corpus is empty")
    return records


def save_records(records: Iterable[MCQRecord], path: str | Path) -> None:
    """Write records as JSONL; load(save(x)) == x for valid corpora."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a corpus into calibration and test halves."""

    calibration_fraction: float
    seed: int
    stratify_by_gold: bool = False

    def __post_init__(self):
        if not (0.0 < self.calibration_fraction < 1.0):
            raise ValidationError(
                f"calibration_fraction must be in (0, 1), got {self.calibration_fraction!r}"
            )


def split(
    records: Sequence[MCQRecord], spec: SplitSpec
) -> tuple[list[MCQRecord], list[MCQRecord]]:
    """Seeded, disjoint, exhaustive calibration/test partition.

    Both sides keep the original corpus order. With ``stratify_by_gold``
    the fraction is applied within each gold-label group (all records then
    need gold labels).
    """
    n = len(records)
    if n < 2:
        raise ValidationError("need at least 2 records to split")
    rng = np.random.default_rng(spec.seed)

    if spec.stratify_by_gold:
        groups: dict[str, list[int]] = {}
        for idx, record in enumerate(records):
            if record.gold is None:
                raise DataError(f"record {record.id!r} has no gold label; cannot stratify")
            groups.setdefault(record.gold, []).append(idx)
        cal_idx: list[int] = []
        for label in sorted(groups):
            indices = groups[label]
            take = int(round(spec.calibration_fraction * len(indices)))
            order = rng.permutation(len(indices))
            cal_idx.extend(indices[i] for i in order[:take])
    else:
        take = int(round(spec.calibration_fraction * n))
        order = rng.permutation(n)
        cal_idx = [int(i) for i in order[:take]]

    cal_set = set(cal_idx)
    if not cal_set or len(cal_set) == n:
        raise ValidationError(
            f"calibration_fraction {spec.calibration_fraction} leaves an empty side for n={n}"
        )
    calibration = [records[i] for i in range(n) if i in cal_set]
    test = [records[i] for i in range(n) if i not in cal_set]
    return calibration, test


_NUMERIC_RE = re.compile(r"^-?\d+\.\d*$")


def normalize_answer(text: str) -> str:
    """Canonical form for open-QA answer matching.

    Trims, lowercases, strips commas, and drops trailing zeros after a
    decimal point ("3.50" == "3.5", "1,234" == "1234").
    """
    out = text.strip().lower().replace(",", "")
    if _NUMERIC_RE.match(out):
        out = out.rstrip("0").rstrip(".")
    return out


def mcqify_open_qa(candidates: Sequence[str]) -> tuple[tuple[str, str], ...]:
    """Turn 1-4 candidate answers into MCQ options ending in "Others".

    Candidates are deduplicated under :func:`normalize_answer` (first
    spelling wins) and labeled A.. in the given order; the final option is
    always "Others". At most 5 options total.
    """
    if not candidates:
        raise ValidationError("need at least one candidate answer")
    if len(candidates) > 4:
        raise ValidationError(f"at most 4 candidate answers, got {len(candidates)}")
    unique: list[str] = []
    seen: set[str] = set()
    for cand in candidates:
        key = normalize_answer(cand)
        if key not in seen:
            seen.add(key)
            unique.append(cand)
    labels = [chr(ord("A") + i) for i in range(len(unique) + 1)]
    options = [(labels[i], unique[i]) for i in range(len(unique))]
    options.append((labels[-1], OTHERS_TEXT))
    return tuple(options)


def grade_open_qa(
    routed_answer: str,
    options: Sequence[tuple[str, str]],
    gold_value: str,
    expensive_answer: str | None = None,
) -> bool:
    """Grade a routed answer label against the free-form gold value.

    Selecting a concrete option is correct iff its text matches the gold
    value under :func:`normalize_answer`. Selecting the final "Others"
    option is correct only when an expensive-model free-form answer is
    supplied and matches the gold value; picking "Others" on the cheap path
    never counts as correct.
    """
    texts = dict(options)
    if routed_answer not in texts:
        raise ValidationError(
            f"label {routed_answer!r} not among options {tuple(texts)}"
        )
    selected = texts[routed_answer]
    is_others = routed_answer == options[-1][0] and selected == OTHERS_TEXT
    if is_others:
        if expensive_answer is None:
            return False
        return normalize_answer(expensive_answer) == normalize_answer(gold_value)
    return normalize_answer(selected) == normalize_answer(gold_value)


def gold_scores(records: Sequence[MCQRecord]) -> list[float]:
    """Nonconformity scores at the gold label, one per record, in order."""
    return [record.gold_score() for record in records]
