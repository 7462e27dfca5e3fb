import numpy as np
import pytest

from conformal_router.conformal import calibrate, quantile_threshold
from conformal_router.errors import (
    DataError,
    RecordErrorReport,
    StrategyUnavailableError,
    ValidationError,
)
from conformal_router.routing import (
    StrategyConfig,
    StrategyKind,
    Target,
    route_cp,
    route_dynathink,
    route_entropy,
    route_explicit,
    route_random,
    route_top1,
    run_strategy,
)

from conftest import make_record


def rec(record_id, probs, **kw):
    kw.setdefault("expensive_answer", "B")
    kw.setdefault("expensive_tokens", 200)
    return make_record(record_id, probs, **kw)


class TestRouteCP:
    def test_singleton_stays_cheap(self):
        record = rec("r", (0.9, 0.05, 0.03, 0.02))
        decision = route_cp(record, q_hat=0.2, alpha=0.2, tau=1)
        assert decision.target is Target.CHEAP
        assert decision.answer == "A"
        assert decision.set_size == 1
        assert decision.tokens_charged == record.cheap_tokens

    def test_large_set_escalates(self):
        record = rec("r", (0.4, 0.3, 0.2, 0.1))
        decision = route_cp(record, q_hat=0.9, alpha=0.2, tau=1)
        assert decision.target is Target.EXPENSIVE
        assert decision.answer == "B"
        assert decision.set_size == 4
        assert decision.tokens_charged == 200

    def test_empty_set_stays_cheap(self):
        # Brute-force check: all scores exceed q_hat, so the set is empty.
        record = rec("r", (0.5, 0.3, 0.1, 0.1))
        q_hat = 0.3
        sizes = sum(1 for p in record.distribution().probs if 1 - p <= q_hat)
        assert sizes == 0
        decision = route_cp(record, q_hat=q_hat, alpha=0.2, tau=1)
        assert decision.set_size == 0
        assert decision.target is Target.CHEAP
        assert decision.answer == "A"

    def test_tau_widens_cheap_band(self):
        record = rec("r", (0.5, 0.5, 0.0, 0.0))
        assert route_cp(record, 0.5, 0.2, tau=1).target is Target.EXPENSIVE
        assert route_cp(record, 0.5, 0.2, tau=2).target is Target.CHEAP

    def test_escalation_without_expensive_answer_names_record(self):
        record = make_record("orphan", (0.4, 0.3, 0.2, 0.1))
        with pytest.raises(DataError, match="orphan"):
            route_cp(record, q_hat=0.9, alpha=0.2, tau=1)

    def test_monotone_in_alpha(self):
        # Raising alpha shrinks sets (nesting), so a cheap decision never
        # flips to expensive.
        rng = np.random.default_rng(42)
        model = calibrate(rng.random(50))
        records = [
            rec(f"r{i}", tuple(map(float, rng.dirichlet([0.8] * 4))))
            for i in range(40)
        ]
        alphas = [0.05, 0.1, 0.2, 0.3, 0.4, 0.45]
        for record in records:
            previous_cheap = False
            for alpha in alphas:
                decision = route_cp(record, quantile_threshold(model, alpha), alpha)
                cheap = decision.target is Target.CHEAP
                if previous_cheap:
                    assert cheap
                previous_cheap = cheap


class TestRouteRandom:
    def test_threshold_zero_never_escalates(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1))
        for i in range(50):
            decision = route_random(record, 0.0, np.random.default_rng([0, i]))
            assert decision.target is Target.CHEAP

    def test_threshold_one_always_escalates(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1))
        for i in range(50):
            decision = route_random(record, 1.0, np.random.default_rng([0, i]))
            assert decision.target is Target.EXPENSIVE

    def test_law_of_large_numbers(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1))
        n = 100_000
        escalated = sum(
            route_random(record, 0.2, np.random.default_rng([7, i])).target
            is Target.EXPENSIVE
            for i in range(n)
        )
        assert abs(escalated / n - 0.2) < 0.01

    def test_bit_reproducible_across_runs(self):
        records = [rec(f"r{i}", (0.7, 0.1, 0.1, 0.1)) for i in range(200)]
        config = StrategyConfig(kind=StrategyKind.RANDOM, threshold=0.35, seed=99)
        assert run_strategy(records, config) == run_strategy(records, config)

    def test_draws_depend_only_on_seed_and_index(self):
        records = [rec(f"r{i}", (0.7, 0.1, 0.1, 0.1)) for i in range(64)]
        config = StrategyConfig(kind=StrategyKind.RANDOM, threshold=0.5, seed=3)
        decisions = run_strategy(records, config)
        for index, decision in enumerate(decisions):
            solo = route_random(records[index], 0.5, np.random.default_rng([3, index]))
            assert solo.target is decision.target


class TestRouteTop1:
    def test_confident_stays_cheap(self):
        assert route_top1(rec("r", (0.9, 0.05, 0.03, 0.02)), 0.8).target is Target.CHEAP

    def test_uniform_escalates(self):
        assert route_top1(rec("r", (0.25,) * 4), 0.6).target is Target.EXPENSIVE

    def test_exact_threshold_stays_cheap(self):
        decision = route_top1(rec("r", (0.75, 0.1, 0.1, 0.05)), 0.75)
        assert decision.target is Target.CHEAP


class TestRouteEntropy:
    def test_one_hot_stays_cheap(self):
        assert route_entropy(rec("r", (1.0, 0.0, 0.0, 0.0)), 0.01).target is Target.CHEAP

    def test_uniform_escalates_at_low_threshold(self):
        # Uniform 4-option entropy is ln 4 ~ 1.386 > 1.0.
        assert route_entropy(rec("r", (0.25,) * 4), 1.0).target is Target.EXPENSIVE

    def test_exact_threshold_stays_cheap(self):
        record = rec("r", (0.25,) * 4)
        threshold = record.distribution().entropy()
        assert route_entropy(record, threshold).target is Target.CHEAP


class TestRouteDynathink:
    def test_strict_majority_stays_cheap_with_agreed_answer(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1), samples=("A", "A", "A", "B", "C"))
        decision = route_dynathink(record)
        assert decision.target is Target.CHEAP
        assert decision.answer == "A"

    def test_majority_answer_can_disagree_with_argmax(self):
        record = rec("r", (0.6, 0.4, 0.0, 0.0), samples=("B", "B", "B", "A"))
        decision = route_dynathink(record)
        assert decision.target is Target.CHEAP
        assert decision.answer == "B"

    def test_no_majority_escalates(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1), samples=("A", "B", "C", "D"))
        assert route_dynathink(record).target is Target.EXPENSIVE

    def test_exactly_half_escalates(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1), samples=("A", "A", "B", "B"))
        assert route_dynathink(record).target is Target.EXPENSIVE

    def test_missing_samples_unavailable(self):
        with pytest.raises(StrategyUnavailableError):
            route_dynathink(rec("r", (0.7, 0.1, 0.1, 0.1)))


class TestRouteExplicit:
    def test_keep(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1), explicit_flag="keep")
        assert route_explicit(record).target is Target.CHEAP

    def test_escalate(self):
        record = rec("r", (0.7, 0.1, 0.1, 0.1), explicit_flag="escalate")
        assert route_explicit(record).target is Target.EXPENSIVE

    def test_escalation_fraction_equals_flagged_fraction(self):
        records = [
            rec(f"r{i}", (0.7, 0.1, 0.1, 0.1),
                explicit_flag="escalate" if i % 5 == 0 else "keep")
            for i in range(100)
        ]
        decisions = run_strategy(records, StrategyConfig(kind=StrategyKind.EXPLICIT))
        escalated = sum(d.target is Target.EXPENSIVE for d in decisions)
        assert escalated == sum(r.explicit_flag == "escalate" for r in records)

    def test_missing_flag_unavailable(self):
        with pytest.raises(StrategyUnavailableError):
            route_explicit(rec("r", (0.7, 0.1, 0.1, 0.1)))


class TestStrategyConfig:
    def test_random_requires_threshold(self):
        with pytest.raises(ValidationError):
            StrategyConfig(kind=StrategyKind.RANDOM)

    def test_top1_threshold_range(self):
        with pytest.raises(ValidationError):
            StrategyConfig(kind=StrategyKind.TOP1, threshold=1.0)

    def test_entropy_threshold_nonnegative(self):
        with pytest.raises(ValidationError):
            StrategyConfig(kind=StrategyKind.ENTROPY, threshold=-0.1)

    def test_tau_positive(self):
        with pytest.raises(ValidationError):
            StrategyConfig(kind=StrategyKind.CP_ROUTER, tau=0)


class TestRunStrategy:
    def test_always_expensive_routes_everything(self):
        records = [rec(f"r{i}", (0.7, 0.1, 0.1, 0.1)) for i in range(10)]
        decisions = run_strategy(records, StrategyConfig(kind=StrategyKind.ALWAYS_EXPENSIVE))
        assert all(d.target is Target.EXPENSIVE for d in decisions)
        assert all(d.tokens_charged == 200 for d in decisions)

    def test_cp_with_saturated_threshold_escalates_everything(self):
        records = [rec(f"r{i}", (0.7, 0.1, 0.1, 0.1)) for i in range(10)]
        decisions = run_strategy(
            records,
            StrategyConfig(kind=StrategyKind.CP_ROUTER, tau=1),
            q_hat=1.0,
            alpha=0.01,
        )
        assert all(d.set_size == 4 for d in decisions)
        assert all(d.target is Target.EXPENSIVE for d in decisions)

    def test_cp_requires_calibration_context(self):
        with pytest.raises(ValidationError):
            run_strategy([], StrategyConfig(kind=StrategyKind.CP_ROUTER))

    def test_hand_traced_decision_table(self):
        # Four archetypes at q_hat=0.5, tau=1, repeated five times:
        #   a (0.8,.1,.06,.04): scores .2,.9,.94,.96 -> {A}   -> cheap  "A"
        #   b (0.5,0.5,0,0):    scores .5,.5,1,1     -> {A,B} -> expensive "C"
        #   c (0.45,.3,.15,.1): all scores > 0.5     -> {}    -> cheap  "A"
        #   d (0.6,.2,.1,.1):   scores .4,.8,.9,.9   -> {A}   -> cheap  "A"
        archetypes = [
            ((0.8, 0.1, 0.06, 0.04), Target.CHEAP, "A", 1),
            ((0.5, 0.5, 0.0, 0.0), Target.EXPENSIVE, "C", 2),
            ((0.45, 0.3, 0.15, 0.1), Target.CHEAP, "A", 0),
            ((0.6, 0.2, 0.1, 0.1), Target.CHEAP, "A", 1),
        ]
        records, expected = [], []
        for rep in range(5):
            for j, (probs, target, answer, size) in enumerate(archetypes):
                records.append(
                    rec(f"r{rep}-{j}", probs, expensive_answer="C", expensive_tokens=300)
                )
                expected.append((target, answer, size))
        decisions = run_strategy(
            records,
            StrategyConfig(kind=StrategyKind.CP_ROUTER, tau=1),
            q_hat=0.5,
            alpha=0.2,
        )
        assert [(d.target, d.answer, d.set_size) for d in decisions] == expected

    def test_aggregates_record_errors(self):
        records = [
            rec("ok-1", (0.7, 0.1, 0.1, 0.1)),
            make_record("bad-1", (0.7, 0.1, 0.1, 0.1)),
            make_record("bad-2", (0.6, 0.2, 0.1, 0.1)),
        ]
        with pytest.raises(RecordErrorReport) as err:
            run_strategy(records, StrategyConfig(kind=StrategyKind.ALWAYS_EXPENSIVE))
        assert [rid for rid, _ in err.value.errors] == ["bad-1", "bad-2"]

    def test_tokens_match_stored_counts(self):
        records = [
            rec(f"r{i}", (0.7, 0.1, 0.1, 0.1), cheap_tokens=11 + i,
                expensive_tokens=400 + i)
            for i in range(20)
        ]
        by_id = {r.id: r for r in records}
        for config in (
            StrategyConfig(kind=StrategyKind.RANDOM, threshold=0.5, seed=1),
            StrategyConfig(kind=StrategyKind.TOP1, threshold=0.9),
            StrategyConfig(kind=StrategyKind.ALWAYS_CHEAP),
        ):
            for decision in run_strategy(records, config):
                record = by_id[decision.record_id]
                expected = (
                    record.cheap_tokens
                    if decision.target is Target.CHEAP
                    else record.expensive_tokens
                )
                assert decision.tokens_charged == expected

    def test_overhead_accounting_adds_cheap_tokens_on_escalation(self):
        record = rec("r", (0.4, 0.3, 0.2, 0.1), cheap_tokens=13, expensive_tokens=200)
        config = StrategyConfig(
            kind=StrategyKind.CP_ROUTER, tau=1, charge_routing_overhead=True
        )
        (decision,) = run_strategy([record], config, q_hat=0.9, alpha=0.2)
        assert decision.target is Target.EXPENSIVE
        assert decision.tokens_charged == 213

    def test_answers_multiset_property(self):
        rng = np.random.default_rng(0)
        records = [
            rec(f"r{i}", tuple(map(float, rng.dirichlet([1.2] * 4))))
            for i in range(60)
        ]
        by_id = {r.id: r for r in records}
        for config in (
            StrategyConfig(kind=StrategyKind.TOP1, threshold=0.5),
            StrategyConfig(kind=StrategyKind.ENTROPY, threshold=1.0),
            StrategyConfig(kind=StrategyKind.RANDOM, threshold=0.4, seed=5),
        ):
            for decision in run_strategy(records, config):
                record = by_id[decision.record_id]
                if decision.target is Target.CHEAP:
                    assert decision.answer == record.cheap_answer
                else:
                    assert decision.answer == record.expensive_answer
