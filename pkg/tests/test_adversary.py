import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from majlab.adversary import (
    AdversaryKind,
    AdversarySpec,
    apply,
    check_displacement,
    f_dynamic_bound,
    f_static_bound,
    propose,
)
from majlab.dynamics import Configuration, OpinionRegistry, step_multinomial
from majlab.errors import BudgetExceeded, NegativeSupport, NonConserving, RegimeTooSmall

A, B, X = 0, 1, 2


class TestApply:
    def test_zero_displacement(self):
        c = Configuration({A: 100, B: 50})
        assert apply(c, {}) == c

    def test_moves_nodes(self):
        reg = OpinionRegistry(["A", "B"])
        out = apply(Configuration({A: 100, B: 50}), {A: -5, X: 5}, budget=5, registry=reg)
        assert out.supports() == {A: 95, B: 50, X: 5}
        assert X in reg

    def test_non_conserving(self):
        with pytest.raises(NonConserving):
            apply(Configuration({A: 100, B: 50}), {A: -5, X: 6})

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            apply(Configuration({A: 100, B: 50}), {A: -5, X: 5}, budget=4)

    def test_negative(self):
        with pytest.raises(NegativeSupport):
            apply(Configuration({A: 3, B: 50}), {A: -5, X: 5})


class TestBounds:
    # Values re-derived by hand with natural logs:
    # 2*1000/(3**2.5*ln 1e6) = 2000/215.36 = 9.29
    # 1e6/3 - sqrt(3e6*ln 1e6) = 333333.33 - 6437.90 = 326895.43
    def test_dynamic(self):
        assert f_dynamic_bound(10**6, 3, 2.0) == 9
        assert f_dynamic_bound(10**4, 3, 1.0) == 0
        assert f_dynamic_bound(2, 1, 1.0) == math.floor(math.sqrt(2) / math.log(2))

    def test_static(self):
        assert f_static_bound(10**6, 3) == 326895
        assert f_static_bound(10**4, 2) == 4570
        with pytest.raises(RegimeTooSmall):
            f_static_bound(100, 10)

    def test_log_base_is_configurable(self):
        assert f_dynamic_bound(10**6, 1, 1.0, log_base=10) == math.floor(1000 / 6)


class TestStrategies:
    def test_null(self):
        assert propose(AdversarySpec(), [], Configuration.uniform(90, 3)) == {}

    def test_static_plant_proportional(self):
        c = Configuration.uniform(9000, 3)
        spec = AdversarySpec(AdversaryKind.STATIC_PLANT, 100, target=3)
        d = propose(spec, [], c)
        assert d[3] == 100
        assert sorted(-d[i] for i in range(3)) == [33, 33, 34]
        assert sum(d.values()) == 0
        # acts only at its activation round
        assert propose(spec, [(c, apply(c, d, 100))], c) == {}

    def test_static_plant_largest_source(self):
        c = Configuration.from_counts([50, 30, 20])
        spec = AdversarySpec(AdversaryKind.STATIC_PLANT, 60, target=5, params={"source": "largest"})
        assert propose(spec, [], c) == {0: -50, 1: -10, 5: 60}

    def test_sustain(self):
        c = Configuration({A: 600, B: 395, X: 5})
        spec = AdversarySpec(AdversaryKind.DYNAMIC_SUSTAIN, 9, target=X)
        assert propose(spec, [], c) == {A: -4, X: 4}
        spec = AdversarySpec(AdversaryKind.DYNAMIC_SUSTAIN, 3, target=X, params={"level": 20})
        assert propose(spec, [], c) == {A: -3, X: 3}
        # nothing to do once the target is at its level
        assert propose(AdversarySpec(AdversaryKind.DYNAMIC_SUSTAIN, 3, target=X), [], c) == {}

    def test_sustain_tie_goes_to_lowest_id(self):
        c = Configuration({A: 500, B: 500})
        assert propose(AdversarySpec(AdversaryKind.DYNAMIC_SUSTAIN, 2, target=X), [], c) == {A: -2, X: 2}

    def test_balance_big(self):
        c = Configuration.from_counts([5000, 3000, 2000])
        spec = AdversarySpec(AdversaryKind.DYNAMIC_BALANCE_BIG, 40)
        assert propose(spec, [], c) == {0: -40, 2: 40}

    def test_feed_min_big(self):
        c = Configuration.from_counts([5000, 3000, 2000])
        spec = AdversarySpec(AdversaryKind.DYNAMIC_FEED_MIN_BIG, 40)
        assert propose(spec, [], c) == {0: -25, 1: -15, 2: 40}

    def test_big_strategies_idle_with_one_big(self):
        c = Configuration({0: 9998, 1: 2})  # small cutoff at n=1e4, k=2 is 3.84
        for kind in (AdversaryKind.DYNAMIC_BALANCE_BIG, AdversaryKind.DYNAMIC_FEED_MIN_BIG):
            assert propose(AdversarySpec(kind, 5), [], c) == {}


ALL_KINDS = [k for k in AdversaryKind if k is not AdversaryKind.NULL]


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(ALL_KINDS),
    counts=st.lists(st.integers(1, 3000), min_size=1, max_size=5),
    budget=st.integers(0, 200),
    seed=st.integers(0, 2**32),
)
def test_every_proposal_is_applicable(kind, counts, budget, seed):
    """Fuzz: along random trajectories every displacement passes apply()."""
    rng = np.random.default_rng(seed)
    c = Configuration.from_counts(counts)
    spec = AdversarySpec(kind, budget, target=len(counts))
    history = []
    planted = 0
    for _ in range(12):
        d = propose(spec, history, c, rng)
        check_displacement(c, d, budget)
        post = apply(c, d, budget)
        if kind is AdversaryKind.STATIC_PLANT:
            planted += bool(d)
        if kind is AdversaryKind.DYNAMIC_SUSTAIN:
            assert post[spec.target] <= c[spec.target] + budget
        history.append((c, post))
        c = step_multinomial(post, rng)
    if kind is AdversaryKind.STATIC_PLANT:
        assert planted <= 1
        assert history[0][1][spec.target] <= budget
