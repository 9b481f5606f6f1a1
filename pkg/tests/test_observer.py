import math
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from majlab.dynamics import Configuration
from majlab.observer import (
    Stage,
    Terminal,
    Thresholds,
    classify_terminal,
    min_big_support,
    monitor_hyp_h,
    partition_small_big,
    small_threshold,
    symmetry_break_threshold,
    track_phases,
    valid_set,
    y_value,
)

A, B, X = 0, 1, 2


class TestThresholds:
    # Re-derived by hand: sqrt(2e4 * 9.21034) = 429.19, sqrt(3e4 * 9.21034) = 525.66
    def test_symmetry_break(self):
        assert symmetry_break_threshold(10**4, 2) == pytest.approx(4570.81, abs=0.01)
        assert symmetry_break_threshold(10**4, 3) == pytest.approx(2807.68, abs=0.01)
        assert symmetry_break_threshold(100, 10) < 0

    def test_small(self):
        assert small_threshold(10**6, 3) == pytest.approx(13.93, abs=0.005)
        assert small_threshold(10**6, 1) == pytest.approx(72.38, abs=0.005)
        assert small_threshold(10**6, 1, Thresholds(gamma=2.0)) == pytest.approx(144.76, abs=0.01)

    def test_denominator_is_configurable(self):
        th = Thresholds(small_k_exponent=0.0, small_log_power=0.0)
        assert small_threshold(10**6, 3, th) == pytest.approx(1000.0)

    @pytest.mark.parametrize("kw", [{"gamma": 0}, {"c_stop": -1}, {"log_base": 1}, {"small_k_exponent": -1}])
    def test_rejects_bad_constants(self, kw):
        with pytest.raises(ValueError):
            Thresholds(**kw)

    def test_gamma_beta_warning(self):
        with pytest.warns(UserWarning):
            assert not Thresholds(gamma=1.0).check_adversary(2.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert Thresholds(gamma=8.0).check_adversary(2.0)
            assert Thresholds().check_adversary(None)


class TestPartition:
    def test_valid_set(self):
        assert valid_set(Configuration({A: 5, B: 5})) == {A, B}

    def test_worked_example(self):
        c = Configuration({A: 999000, B: 986, X: 14})
        small, big = partition_small_big(c, {A, B, X})
        assert small == frozenset() and big == {A, B, X}

    def test_consensus(self):
        small, big = partition_small_big(Configuration({B: 10**6}), {A, B})
        assert small == frozenset() and big == {B}

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 5000), min_size=1, max_size=6).filter(lambda xs: sum(xs) >= 2))
    def test_exhaustive_and_exclusive(self, counts):
        c = Configuration.from_counts(counts)
        small, big = partition_small_big(c, range(len(counts)))
        assert not small & big
        assert small | big == set(c.active)


class TestPotential:
    def test_min_big(self):
        c = Configuration.from_counts([5, 3, 2])
        assert min_big_support(c, {0, 1, 2}) == (2, 2)
        assert min_big_support(Configuration.from_counts([3, 3, 4]), {0, 1, 2}) == (0, 3)
        assert min_big_support(c, {0}) == (0, 5)
        with pytest.raises(ValueError):
            min_big_support(c, set())

    def test_y_value(self):
        assert y_value(Configuration.from_counts([5, 3, 2]), {0, 1, 2}) == 1
        assert y_value(Configuration.uniform(10, 3), {0, 1, 2}) == 0
        assert y_value(Configuration({A: 77}), {A}) == 0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 10**6), min_size=1, max_size=6))
    def test_y_nonnegative_and_recomputable(self, counts):
        c = Configuration.from_counts(counts)
        big = set(c.active)
        y = y_value(c, big)
        assert y >= 0  # the minimum never exceeds the mean
        assert y == y_value(Configuration.from_text(c.to_text()), big)


class TestTerminal:
    def test_examples(self):
        v = classify_terminal(Configuration({A: 100}), {A, B})
        assert (v.terminal, v.winner, v.winner_valid, v.residual) == (Terminal.STRICT_CONSENSUS, A, True, 0)
        v = classify_terminal(Configuration({A: 999990, X: 10}), {A, B})
        assert v.terminal is Terminal.ALMOST_CONSENSUS and v.winner == A and v.residual == 10
        assert classify_terminal(Configuration({A: 500000, B: 500000}), {A, B}).terminal is None

    def test_nonvalid_winner(self):
        v = classify_terminal(Configuration({A: 5, X: 999995}), {A, B})
        assert v.winner == X and not v.winner_valid

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.integers(1, 10**5), min_size=2, max_size=4),
        st.floats(0.01, 50),
        st.floats(0, 50),
    )
    def test_monotone_in_c_stop(self, counts, c_stop, extra):
        c = Configuration.from_counts(counts)
        lo = classify_terminal(c, c.active, Thresholds(c_stop=c_stop)).terminal
        hi = classify_terminal(c, c.active, Thresholds(c_stop=c_stop + extra)).terminal
        if lo is Terminal.ALMOST_CONSENSUS:
            assert hi is Terminal.ALMOST_CONSENSUS


class TestHypH:
    def test_empty(self):
        assert monitor_hyp_h([], {A}) == []

    def test_small_to_big(self):
        n = 10**6
        traj = [Configuration({A: n - 510, B: 500, X: s}) for s in (10, 10, 200)]
        events = monitor_hyp_h(traj, {A, B, X}, start_round=4)
        assert len(events) == 1
        ev = events[0]
        assert (ev.round, ev.kind, ev.opinion, ev.value) == (6, "small_to_big", X, 200)
        assert ev.threshold == pytest.approx(13.93, abs=0.005)

    def test_nonvalid_mass(self):
        n = 10**6
        traj = [Configuration({A: n // 2, B: n // 2}), Configuration({A: n // 2 - 30, B: n // 2, X: 30})]
        events = monitor_hyp_h(traj, {A, B})
        assert [(e.round, e.kind, e.value) for e in events] == [(1, "nonvalid_mass", 30)]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.lists(st.integers(1, 10**4), min_size=2, max_size=2), min_size=1, max_size=8))
    def test_no_mass_events_without_nonvalid_opinions(self, rows):
        traj = [Configuration({A: a, B: b + (sum(rows[0]) - a - b)}) for a, b in rows if a < sum(rows[0])]
        assert all(e.kind != "nonvalid_mass" for e in monitor_hyp_h(traj, {A, B}))


class TestPhases:
    def test_consensus(self):
        trace = track_phases([Configuration({A: 10**4})] * 3, {A})
        assert trace.transitions == [] and trace.phases == []

    def test_two_opinion_run(self):
        n = 10**4
        supports = [5000, 4700, 4400, 2000, 300, 10, 0]
        traj = [Configuration({A: n - s, B: s}) for s in supports]
        trace = track_phases(traj, {A, B})
        assert len(trace.phases) == 1
        ph = trace.phases[0]
        assert ph.j == 2 and ph.entered_at == 0
        assert ph.break_round == 2 and ph.breaking_opinion == B
        # j^2 ln n = 36.8, n/(2j) = 2500
        assert ph.half_round == 3 and ph.stage1_round == 5
        assert ph.drop_round == ph.ended_at == 6 and ph.dropped == (B,)
        assert ph.stage is Stage.DROPPING
        assert ph.breaking_duration == 2 and ph.dropping_duration == 4
        assert [(s.j, s.stage, s.entered_at) for s in trace.transitions] == [
            (2, Stage.SYMMETRY_BREAKING, 0),
            (2, Stage.DROPPING, 2),
        ]

    def test_injected_crossing_at_round_seven(self):
        n = 9999
        flat = Configuration({A: 3333, B: 3333, X: 3333})
        crossed = Configuration({A: 3700, B: 3499, X: 2800})
        traj = [flat] * 7 + [crossed] * 3
        trace = track_phases(traj, {A, B, X})
        assert trace.tau_break(3) == 7
        assert trace.tau_break(2) is None
        assert trace.phases[0].breaking_opinion == X

    def test_regime_too_small_phase_has_no_break(self):
        traj = [Configuration.uniform(100, 10), Configuration.from_counts([1, 1, 1, 1, 1, 1, 1, 1, 1, 91])]
        trace = track_phases(traj, range(10))
        assert trace.phases[0].regime_too_small
        assert trace.tau_break(10) is None

    def test_adversarial_j_counts_big(self):
        n = 10**6
        c = Configuration({A: n // 2 - 5, B: n // 2 - 5, X: 10})
        trace = track_phases([c], {A, B}, adversarial=True)
        assert trace.phases[0].j == 2
        assert math.isclose(trace.phases[0].threshold, symmetry_break_threshold(n, 2))
