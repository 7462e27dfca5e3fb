"""Error-rate selection by entropy of the prediction-set-size distribution.

For each candidate error rate we build prediction sets over an unlabeled
pool, histogram their sizes, and score the histogram with a weighted sum of
two entropies: the full entropy over all sizes (diversity of uncertainty
levels) and the binary entropy of singleton vs non-singleton (balance
between the two routing targets). The candidate maximizing that sum wins.

All entropies are in nats. Labels are never consulted; selection is purely
a function of the unlabeled pool.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .conformal import CalibrationModel, OptionDistribution, prediction_set, quantile_threshold
from .errors import ValidationError

#: 3:1 weighting of full vs binary entropy.
DEFAULT_BETA = 3.0

#: Candidate error rates 0.01 .. 0.50 in steps of 0.01.
DEFAULT_ALPHA_GRID: tuple[float, ...] = tuple(round(0.01 * i, 2) for i in range(1, 51))


@dataclass(frozen=True)
class SetSizeHistogram:
    """Counts of prediction-set sizes over a pool of inputs.

    Parameters
    ----------
    counts : mapping of int -> int
        Size -> number of inputs with a set of that size. Size 0 is legal.
    total : int
        Sum of all counts; must be >= 1.
    """

    counts: Mapping[int, int]
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise ValidationError("histogram needs at least one observation")
        if any(size < 0 or count < 0 for size, count in self.counts.items()):
            raise ValidationError("sizes and counts must be non-negative")
        if sum(self.counts.values()) != self.total:
            raise ValidationError(
                f"counts sum to {sum(self.counts.values())}, total says {self.total}"
            )

    @classmethod
    def from_sizes(cls, sizes: Iterable[int]) -> "SetSizeHistogram":
        counts = Counter(int(s) for s in sizes)
        if not counts:
            raise ValidationError("histogram needs at least one observation")
        return cls(counts=dict(counts), total=sum(counts.values()))

    def singleton_fraction(self) -> float:
        return self.counts.get(1, 0) / self.total


def full_entropy(hist: SetSizeHistogram) -> float:
    """Shannon entropy (nats) over the full set-size distribution.

    Zero when every input has the same set size; at most ``ln`` of the
    number of distinct sizes.
    """
    return -math.fsum(
        (c / hist.total) * math.log(c / hist.total)
        for c in hist.counts.values()
        if c > 0
    )


def binary_entropy(hist: SetSizeHistogram) -> float:
    """Shannon entropy (nats) of singleton vs non-singleton set sizes.

    Every size other than 1 (including empty sets) pools into the
    non-singleton bucket. At most ``ln 2``.
    """
    p1 = hist.singleton_fraction()
    out = 0.0
    if p1 > 0.0:
        out -= p1 * math.log(p1)
    if p1 < 1.0:
        out -= (1.0 - p1) * math.log(1.0 - p1)
    return out


def fbe(hist: SetSizeHistogram, beta: float = DEFAULT_BETA) -> float:
    """Weighted sum ``beta * full_entropy + binary_entropy`` in nats."""
    if beta < 0.0:
        raise ValidationError(f"beta must be >= 0, got {beta!r}")
    return beta * full_entropy(hist) + binary_entropy(hist)


@dataclass(frozen=True)
class FBECandidate:
    """Diagnostics for one candidate error rate."""

    alpha: float
    q_hat: float
    histogram: SetSizeHistogram
    h_full: float
    h_binary: float
    fbe: float


@dataclass(frozen=True)
class FBEReport:
    """Outcome of the error-rate grid search.

    ``candidates`` preserves grid order; ``selected_alpha`` is the candidate
    with maximal FBE (smallest alpha on ties).
    """

    candidates: tuple[FBECandidate, ...]
    selected_alpha: float
    beta: float

    @property
    def selected(self) -> FBECandidate:
        for cand in self.candidates:
            if cand.alpha == self.selected_alpha:
                return cand
        raise ValidationError(f"selected alpha {self.selected_alpha} not among candidates")

    def to_dict(self) -> dict:
        """JSON-ready representation (sizes keyed by string for JSON)."""
        return {
            "beta": self.beta,
            "selected_alpha": self.selected_alpha,
            "selected_q_hat": self.selected.q_hat,
            "candidates": [
                {
                    "alpha": c.alpha,
                    "q_hat": c.q_hat,
                    "set_sizes": {str(k): v for k, v in sorted(c.histogram.counts.items())},
                    "total": c.histogram.total,
                    "h_full": c.h_full,
                    "h_binary": c.h_binary,
                    "fbe": c.fbe,
                }
                for c in self.candidates
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FBEReport":
        candidates = tuple(
            FBECandidate(
                alpha=float(c["alpha"]),
                q_hat=float(c["q_hat"]),
                histogram=SetSizeHistogram(
                    counts={int(k): int(v) for k, v in c["set_sizes"].items()},
                    total=int(c["total"]),
                ),
                h_full=float(c["h_full"]),
                h_binary=float(c["h_binary"]),
                fbe=float(c["fbe"]),
            )
            for c in obj["candidates"]
        )
        return cls(
            candidates=candidates,
            selected_alpha=float(obj["selected_alpha"]),
            beta=float(obj["beta"]),
        )


def set_sizes_at(
    model: CalibrationModel, dists: Sequence[OptionDistribution], alpha: float
) -> list[int]:
    """Prediction-set sizes of every distribution at error rate ``alpha``."""
    q_hat = quantile_threshold(model, alpha)
    return [prediction_set(dist, q_hat, alpha).size for dist in dists]


def select_alpha(
    model: CalibrationModel,
    test_dists: Sequence[OptionDistribution],
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    beta: float = DEFAULT_BETA,
) -> FBEReport:
    """Grid-search the error rate that maximizes FBE over an unlabeled pool.

    Parameters
    ----------
    model : CalibrationModel
        Frozen calibration scores providing the per-alpha thresholds.
    test_dists : sequence of OptionDistribution
        Unlabeled pool whose prediction sets get histogrammed. Gold labels
        are deliberately not part of this interface.
    alpha_grid : sequence of float
        Candidate error rates, each in (0, 1).
    beta : float
        Weight of the full-entropy term.

    Returns
    -------
    FBEReport
        Per-candidate histograms and entropies plus the winning alpha.
        Ties go to the smallest alpha.
    """
    if not alpha_grid:
        raise ValidationError("alpha grid must be non-empty")
    if not test_dists:
        raise ValidationError("test pool must be non-empty")
    if beta < 0.0:
        raise ValidationError(f"beta must be >= 0, got {beta!r}")

    candidates = []
    for alpha in alpha_grid:
        q_hat = quantile_threshold(model, alpha)  # validates alpha range
        hist = SetSizeHistogram.from_sizes(
            prediction_set(dist, q_hat, alpha).size for dist in test_dists
        )
        h_full = full_entropy(hist)
        h_binary = binary_entropy(hist)
        candidates.append(
            FBECandidate(
                alpha=float(alpha),
                q_hat=q_hat,
                histogram=hist,
                h_full=h_full,
                h_binary=h_binary,
                fbe=beta * h_full + h_binary,
            )
        )

    best = max(candidates, key=lambda c: (c.fbe, -c.alpha))
    return FBEReport(
        candidates=tuple(candidates), selected_alpha=best.alpha, beta=float(beta)
    )
