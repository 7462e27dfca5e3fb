"""Split conformal prediction over multiple-choice option distributions.

The nonconformity score of an option is one minus its probability, so a
calibrated threshold on scores turns directly into a prediction set: every
option whose probability is high enough stays in. The quantile is the exact
``ceil((n + 1) * (1 - alpha))``-th smallest calibration score (an order
statistic, never interpolated), which is what gives the finite-sample
coverage guarantee under exchangeability.

Everything here is a pure function over immutable values and safe for
unrestricted concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

# Absolute slack when ceiling (n+1)*(1-alpha): products that are integers in
# real arithmetic (e.g. 10 * 0.9) can land a few ulp off in floats.
_CEIL_GUARD = 1e-9

MAX_OPTIONS = 26


@dataclass(frozen=True)
class OptionDistribution:
    """A probability distribution over the answer options of one prompt.

    Parameters
    ----------
    labels : tuple of str
        Option labels in presentation order, e.g. ``("A", "B", "C", "D")``.
    probs : tuple of float
        Probabilities aligned with ``labels``; each in [0, 1], summing to 1
        within 1e-6.
    """

    labels: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if not (2 <= len(self.labels) <= MAX_OPTIONS):
            raise ValidationError(
                f"need between 2 and {MAX_OPTIONS} options, got {len(self.labels)}"
            )
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError(f"duplicate option labels in {self.labels}")
        if len(self.probs) != len(self.labels):
            raise ValidationError(
                f"{len(self.probs)} probabilities for {len(self.labels)} labels"
            )
        for p in self.probs:
            if not (0.0 <= p <= 1.0) or not math.isfinite(p):
                raise ValidationError(f"probability {p!r} outside [0, 1]")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_logits(cls, labels: Sequence[str], logits: Sequence[float]) -> "OptionDistribution":
        """Build a distribution by softmaxing raw option logits."""
        probs = softmax_over_options(logits)
        return cls(labels=tuple(labels), probs=tuple(float(p) for p in probs))

    def prob(self, label: str) -> float:
        """Probability assigned to ``label``; raises for unknown labels."""
        try:
            return self.probs[self.labels.index(label)]
        except ValueError:
            raise ValidationError(f"unknown option label {label!r}; have {self.labels}") from None

    def argmax_label(self) -> str:
        """Label with the highest probability (first one wins ties)."""
        return self.labels[int(np.argmax(self.probs))]

    def entropy(self) -> float:
        """Shannon entropy of the distribution in nats."""
        return -math.fsum(p * math.log(p) for p in self.probs if p > 0.0)


def softmax_over_options(logits: Sequence[float]) -> np.ndarray:
    """Softmax a vector of option logits into probabilities.

    Uses the max-shifted form, so the result is invariant (to ~1e-12) under
    adding a constant to all logits.

    Parameters
    ----------
    logits : sequence of float
        At least two finite logits.

    Returns
    -------
    np.ndarray
        Probabilities in the input order, summing to 1 within 1e-9.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValidationError(f"need at least 2 logits, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("logits must all be finite")
    shifted = np.exp(arr - arr.max())
    return shifted / shifted.sum()


def score(dist: OptionDistribution, label: str) -> float:
    """Nonconformity score of ``label`` under ``dist``: 1 minus its probability.

    Low scores mean the option is plausible. Always in [0, 1].
    """
    return 1.0 - dist.prob(label)


@dataclass(frozen=True)
class CalibrationModel:
    """Sorted nonconformity scores of the calibration split.

    Immutable after construction; build via :func:`calibrate`.

    Parameters
    ----------
    scores : tuple of float
        Ascending nonconformity scores, one per calibration record.
    n : int
        Number of calibration records, ``len(scores)``.
    """

    scores: tuple[float, ...]
    n: int

    def __post_init__(self):
        if self.n < 1 or self.n != len(self.scores):
            raise ValidationError(f"n={self.n} inconsistent with {len(self.scores)} scores")
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValidationError(f"score {s!r} outside [0, 1]")
        if any(a > b for a, b in zip(self.scores, self.scores[1:])):
            raise ValidationError("scores must be sorted ascending")


def calibrate(gold_scores: Iterable[float]) -> CalibrationModel:
    """Build a :class:`CalibrationModel` from gold-label nonconformity scores.

    Parameters
    ----------
    gold_scores : iterable of float
        One score per calibration record (scored at the true label).

    Returns
    -------
    CalibrationModel
        Holds a sorted copy of the scores and their count.
    """
    scores = tuple(sorted(float(s) for s in gold_scores))
    if not scores:
        raise ValidationError("calibration requires at least one score")
    return CalibrationModel(scores=scores, n=len(scores))


def quantile_threshold(model: CalibrationModel, alpha: float) -> float:
    """Finite-sample conformal threshold ``q_hat`` at error rate ``alpha``.

    Returns the ``k``-th smallest calibration score with
    ``k = ceil((n + 1) * (1 - alpha))``. When ``k`` exceeds ``n`` (alpha too
    small for the calibration size) the threshold saturates at 1.0, which
    admits every option.

    Parameters
    ----------
    model : CalibrationModel
    alpha : float
        Target error rate, strictly between 0 and 1.
    """
    if not (0.0 < alpha < 1.0):
        raise ValidationError(f"alpha must be in (0, 1), got {alpha!r}")
    k = math.ceil((model.n + 1) * (1.0 - alpha) - _CEIL_GUARD)
    if k > model.n:
        return 1.0
    return model.scores[k - 1]


@dataclass(frozen=True)
class PredictionSet:
    """Options whose nonconformity score is at or below the threshold.

    ``members`` keeps the label order of the source distribution. The empty
    set is legal (it occurs when ``q_hat`` is below the top option's score)
    and is preserved as such; downstream consumers decide what a size-0 set
    means.
    """

    members: tuple[str, ...]
    q_hat: float
    alpha: float

    @property
    def size(self) -> int:
        return len(self.members)

    def __contains__(self, label: str) -> bool:
        return label in self.members


def prediction_set(dist: OptionDistribution, q_hat: float, alpha: float) -> PredictionSet:
    """Construct the prediction set of ``dist`` at threshold ``q_hat``.

    Membership is inclusive at the threshold: label ``y`` is in the set iff
    ``1 - prob(y) <= q_hat``.
    """
    if not (0.0 <= q_hat <= 1.0):
        raise ValidationError(f"q_hat must be in [0, 1], got {q_hat!r}")
    members = tuple(
        label for label, p in zip(dist.labels, dist.probs) if 1.0 - p <= q_hat
    )
    return PredictionSet(members=members, q_hat=q_hat, alpha=alpha)


def empirical_coverage(
    model: CalibrationModel,
    labeled_test: Sequence[tuple[OptionDistribution, str]],
    alpha: float,
) -> float:
    """Fraction of test records whose gold label lands in its prediction set.

    Membership of the gold label is exactly the comparison
    ``score(dist, gold) <= q_hat`` (score/set duality), which is what gets
    evaluated here, vectorized over the test list.

    Parameters
    ----------
    model : CalibrationModel
    labeled_test : sequence of (OptionDistribution, gold label)
    alpha : float
        Error rate at which to compute the threshold.
    """
    if not labeled_test:
        raise ValidationError("empirical_coverage needs a non-empty test list")
    q_hat = quantile_threshold(model, alpha)
    gold_scores = np.fromiter(
        (score(dist, gold) for dist, gold in labeled_test),
        dtype=np.float64,
        count=len(labeled_test),
    )
    return float(np.mean(gold_scores <= q_hat))
