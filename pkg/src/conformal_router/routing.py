"""Routing decisions: the prediction-set-size rule and the baselines.

Every strategy consumes :class:`~conformal_router.dataset.MCQRecord`
streams and emits one :class:`RoutingDecision` per record, in input order.
A record stays with the cheap model (its stored argmax answer and token
count) or escalates to the expensive one (its stored answer and token
count). The sampled-majority and self-assessment baselines replay fields
recorded in the corpus; they never issue live model calls here.

Boundary conventions, pinned for determinism:

* top-1: max probability ``>=`` threshold stays cheap;
* entropy: entropy strictly ``>`` threshold escalates;
* sampled majority: strictly more than half of the samples must agree;
* set-size rule: set size ``<= tau`` stays cheap, which includes empty sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .conformal import prediction_set
from .dataset import MCQRecord
from .errors import (
    DataError,
    RecordErrorReport,
    StrategyUnavailableError,
    ValidationError,
)


class Target(str, Enum):
    CHEAP = "cheap"
    EXPENSIVE = "expensive"


class StrategyKind(str, Enum):
    CP_ROUTER = "cp_router"
    RANDOM = "random"
    TOP1 = "top1"
    ENTROPY = "entropy"
    DYNATHINK = "dynathink"
    EXPLICIT = "explicit"
    ALWAYS_CHEAP = "always_cheap"
    ALWAYS_EXPENSIVE = "always_expensive"


#: Strategies that consult the cheap model's output before escalating; only
#: these can be charged the cheap scoring tokens on top of escalation.
_CONSULTS_CHEAP = {
    StrategyKind.CP_ROUTER,
    StrategyKind.TOP1,
    StrategyKind.ENTROPY,
    StrategyKind.DYNATHINK,
    StrategyKind.EXPLICIT,
}


@dataclass(frozen=True)
class RoutingDecision:
    """Where one record went and what it cost.

    ``set_size`` is populated only by the set-size strategy; baselines leave
    it ``None``.
    """

    record_id: str
    target: Target
    answer: str
    tokens_charged: int
    set_size: int | None = None


@dataclass(frozen=True)
class StrategyConfig:
    """Configuration of one routing strategy.

    ``threshold`` is interpreted per kind: escalation probability for
    random, minimum top-1 probability for top1, maximum entropy in nats for
    entropy. ``charge_routing_overhead`` additionally bills the cheap
    model's scoring tokens on escalated records, for strategies that
    consulted the cheap model before deciding.
    """

    kind: StrategyKind
    threshold: float | None = None
    tau: int = 1
    seed: int = 0
    charge_routing_overhead: bool = False

    def __post_init__(self):
        if self.kind is StrategyKind.RANDOM:
            if self.threshold is None or not (0.0 <= self.threshold <= 1.0):
                raise ValidationError(
                    f"random routing needs threshold in [0, 1], got {self.threshold!r}"
                )
        elif self.kind is StrategyKind.TOP1:
            if self.threshold is None or not (0.0 < self.threshold < 1.0):
                raise ValidationError(
                    f"top-1 routing needs threshold in (0, 1), got {self.threshold!r}"
                )
        elif self.kind is StrategyKind.ENTROPY:
            if self.threshold is None or self.threshold < 0.0:
                raise ValidationError(
                    f"entropy routing needs threshold >= 0, got {self.threshold!r}"
                )
        if self.tau < 1:
            raise ValidationError(f"tau must be a positive integer, got {self.tau!r}")


def _expensive_answer(record: MCQRecord) -> str:
    if record.expensive_answer is None:
        raise DataError(
            f"record {record.id!r}: escalation requires an expensive-model answer"
        )
    return record.expensive_answer


def _decide(
    record: MCQRecord,
    escalate: bool,
    *,
    answer_cheap: str | None = None,
    set_size: int | None = None,
    charge_overhead: bool = False,
) -> RoutingDecision:
    if escalate:
        tokens = record.expensive_tokens if record.expensive_tokens is not None else 0
        answer = _expensive_answer(record)
        if charge_overhead:
            tokens += record.cheap_tokens
        return RoutingDecision(
            record_id=record.id,
            target=Target.EXPENSIVE,
            answer=answer,
            tokens_charged=tokens,
            set_size=set_size,
        )
    return RoutingDecision(
        record_id=record.id,
        target=Target.CHEAP,
        answer=answer_cheap if answer_cheap is not None else record.cheap_answer,
        tokens_charged=record.cheap_tokens,
        set_size=set_size,
    )


def route_cp(
    record: MCQRecord,
    q_hat: float,
    alpha: float,
    tau: int = 1,
    charge_overhead: bool = False,
) -> RoutingDecision:
    """Set-size rule: stay cheap iff the prediction set has at most ``tau`` members.

    Empty sets (size 0) stay cheap with the argmax answer.
    """
    pset = prediction_set(record.distribution(), q_hat, alpha)
    escalate = pset.size > tau
    return _decide(
        record,
        escalate,
        set_size=pset.size,
        charge_overhead=charge_overhead,
    )


def route_random(
    record: MCQRecord, threshold: float, rng: np.random.Generator
) -> RoutingDecision:
    """Escalate with probability ``threshold`` using the supplied generator."""
    escalate = bool(rng.random() < threshold)
    return _decide(record, escalate)


def route_top1(
    record: MCQRecord, threshold: float, charge_overhead: bool = False
) -> RoutingDecision:
    """Stay cheap iff the top option probability is at least ``threshold``."""
    top = max(record.distribution().probs)
    return _decide(record, top < threshold, charge_overhead=charge_overhead)


def route_entropy(
    record: MCQRecord, threshold: float, charge_overhead: bool = False
) -> RoutingDecision:
    """Escalate iff the option-distribution entropy (nats) exceeds ``threshold``."""
    entropy = record.distribution().entropy()
    return _decide(record, entropy > threshold, charge_overhead=charge_overhead)


def route_dynathink(record: MCQRecord, charge_overhead: bool = False) -> RoutingDecision:
    """Majority vote over recorded samples: stay cheap only on a strict majority.

    The agreed option becomes the cheap answer. An exact half split is not
    a majority and escalates.
    """
    if not record.samples:
        raise StrategyUnavailableError(
            f"record {record.id!r} carries no sampled answers"
        )
    counts: dict[str, int] = {}
    for s in record.samples:
        counts[s] = counts.get(s, 0) + 1
    winner, votes = max(counts.items(), key=lambda kv: kv[1])
    if votes * 2 > len(record.samples):
        return _decide(record, False, answer_cheap=winner)
    return _decide(record, True, charge_overhead=charge_overhead)


def route_explicit(record: MCQRecord, charge_overhead: bool = False) -> RoutingDecision:
    """Follow the cheap model's own recorded keep/escalate verdict."""
    if record.explicit_flag is None:
        raise StrategyUnavailableError(
            f"record {record.id!r} carries no explicit routing flag"
        )
    return _decide(
        record, record.explicit_flag == "escalate", charge_overhead=charge_overhead
    )


def run_strategy(
    records: Iterable[MCQRecord],
    config: StrategyConfig,
    q_hat: float | None = None,
    alpha: float | None = None,
) -> list[RoutingDecision]:
    """Route every record under one strategy, deterministically.

    The set-size strategy requires ``q_hat`` and ``alpha`` from a frozen
    calibration. The random baseline derives each record's draw from
    ``(config.seed, record index)``, so results do not depend on execution
    order. Per-record data errors are collected and raised together as a
    :class:`~conformal_router.errors.RecordErrorReport` after the pass;
    malformed configuration fails immediately.
    """
    if config.kind is StrategyKind.CP_ROUTER and (q_hat is None or alpha is None):
        raise ValidationError("set-size routing requires q_hat and alpha")

    decisions: list[RoutingDecision] = []
    errors: list[tuple[str, str]] = []
    overhead = config.charge_routing_overhead and config.kind in _CONSULTS_CHEAP

    for index, record in enumerate(records):
        try:
            if config.kind is StrategyKind.CP_ROUTER:
                decision = route_cp(
                    record, q_hat, alpha, tau=config.tau, charge_overhead=overhead
                )
            elif config.kind is StrategyKind.RANDOM:
                rng = np.random.default_rng([config.seed, index])
                decision = route_random(record, config.threshold, rng)
            elif config.kind is StrategyKind.TOP1:
                decision = route_top1(record, config.threshold, charge_overhead=overhead)
            elif config.kind is StrategyKind.ENTROPY:
                decision = route_entropy(record, config.threshold, charge_overhead=overhead)
            elif config.kind is StrategyKind.DYNATHINK:
                decision = route_dynathink(record, charge_overhead=overhead)
            elif config.kind is StrategyKind.EXPLICIT:
                decision = route_explicit(record, charge_overhead=overhead)
            elif config.kind is StrategyKind.ALWAYS_CHEAP:
                decision = _decide(record, False)
            elif config.kind is StrategyKind.ALWAYS_EXPENSIVE:
                decision = _decide(record, True)
            else:  # pragma: no cover - enum is closed
                raise ValidationError(f"unknown strategy kind {config.kind!r}")
            decisions.append(decision)
        except DataError as exc:
            errors.append((record.id, str(exc)))

    if errors:
        raise RecordErrorReport(errors)
    return decisions
