"""Isotonic fit, step-function application, and window refresh."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from notif_ltv import (
    CalibrationMap,
    NotificationEvent,
    apply_calibration,
    fit_isotonic,
    pav,
    refresh,
)
from oracles import isotonic_fit_oracle, pav_oracle


class TestPav:
    def test_single_violation_pools(self):
        assert pav([1.1, 1.3, 1.2]) == [1.1, 1.25, 1.25]

    def test_monotone_input_is_fixed_point(self):
        vals = [0.1, 0.2, 0.2, 0.9]
        assert pav(vals) == vals

    def test_decreasing_direction(self):
        assert pav([0.9, 0.95], increasing=False) == [0.925, 0.925]

    def test_weights_shift_pooled_mean(self):
        # pooled mean of (1.0 w=3, 0.0 w=1) is 0.75
        assert pav([1.0, 0.0], [3.0, 1.0]) == [0.75, 0.75]

    def test_zero_weight_entry_respects_envelope(self):
        # the weightless middle cell gets pulled up to the data value
        assert pav([1.2, 1.0, 1.3], [10.0, 0.0, 5.0]) == [1.2, 1.2, 1.3]

    def test_empty_input(self):
        assert pav([]) == []

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=10),
           st.data())
    def test_matches_quadratic_oracle(self, vals, data):
        wts = data.draw(st.lists(st.sampled_from([0.0, 1.0, 2.0, 5.0]),
                                 min_size=len(vals), max_size=len(vals)))
        got = pav(vals, wts)
        want = pav_oracle(vals, wts)
        assert got == want
        assert all(b >= a for a, b in zip(got, got[1:]))


class TestFitIsotonic:
    def test_pools_violation(self):
        cmap = fit_isotonic([(0.1, 1), (0.2, 0), (0.3, 1)])
        assert cmap.breakpoints == (0.1, 0.2, 0.3)
        assert cmap.values == (0.5, 0.5, 1.0)

    def test_monotone_outcomes_are_fixed_point(self):
        cmap = fit_isotonic([(0.1, 0), (0.2, 0), (0.3, 1), (0.4, 1)])
        assert cmap.values == (0.0, 0.0, 1.0, 1.0)

    def test_all_zero_outcomes_give_constant_zero(self):
        cmap = fit_isotonic([(0.2, 0), (0.7, 0), (0.9, 0)])
        assert set(cmap.values) == {0.0}

    def test_ties_pooled_before_fit(self):
        cmap = fit_isotonic([(0.5, 1), (0.5, 0), (0.2, 0)])
        assert cmap.breakpoints == (0.2, 0.5)
        assert cmap.values == (0.0, 0.5)

    def test_fewer_than_two_pairs_rejected(self):
        with pytest.raises(ValueError):
            fit_isotonic([(0.5, 1)])

    def test_score_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            fit_isotonic([(0.5, 1), (1.2, 0)])

    def test_matches_oracle_on_random_inputs(self):
        rng = np.random.default_rng(61)
        for _ in range(300):
            n = rng.integers(2, 13)
            scores = rng.choice([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0], size=n)
            outcomes = rng.integers(0, 2, size=n)
            pairs = list(zip(scores.tolist(), outcomes.tolist()))
            cmap = fit_isotonic(pairs)
            bps, fitted = isotonic_fit_oracle(pairs)
            assert list(cmap.breakpoints) == bps
            assert list(cmap.values) == fitted


class TestApplyCalibration:
    @pytest.fixture
    def cmap(self):
        return CalibrationMap(breakpoints=(0.1, 0.3), values=(0.5, 1.0))

    def test_between_breakpoints_takes_left_value(self, cmap):
        assert apply_calibration(cmap, 0.2) == 0.5

    def test_below_first_breakpoint_clamps_left(self, cmap):
        assert apply_calibration(cmap, 0.05) == 0.5

    def test_breakpoint_is_inclusive(self, cmap):
        assert apply_calibration(cmap, 0.3) == 1.0

    @given(st.data())
    def test_non_decreasing_in_raw_score(self, data):
        n = data.draw(st.integers(1, 6))
        bps = sorted(data.draw(st.sets(st.floats(0, 1, allow_nan=False),
                                       min_size=n, max_size=n)))
        vals = sorted(data.draw(st.lists(st.floats(0, 1, allow_nan=False),
                                         min_size=n, max_size=n)))
        cmap = CalibrationMap(breakpoints=tuple(bps), values=tuple(vals))
        xs = np.linspace(0, 1, 101)
        ys = [apply_calibration(cmap, x) for x in xs]
        assert all(b >= a for a, b in zip(ys, ys[1:]))


class TestRefresh:
    def make_events(self, times, score=0.5, outcome=1):
        return [NotificationEvent("u1", 1, t, score, outcome) for t in times]

    def test_fits_on_window_events_only(self):
        inside = [NotificationEvent("u1", 1, 1000 + i, 0.1 * (i % 9), i % 2)
                  for i in range(100)]
        outside = self.make_events([-999999])
        cmap = refresh(outside + inside, now=2000, window_hours=24)
        total_weight = len(cmap.breakpoints)
        assert cmap is not None and total_weight >= 2
        assert cmap.fitted_at == 2000

    def test_single_event_keeps_previous(self):
        prev = CalibrationMap(breakpoints=(0.5,), values=(0.4,))
        got = refresh(self.make_events([100]), now=200, window_hours=24, previous=prev)
        assert got is prev

    def test_event_just_outside_window_excluded(self):
        now = 100 * 3600
        edge = self.make_events([now - 25 * 3600])  # 25h old with a 24h window
        inside = self.make_events([now - 3600, now - 2 * 3600], score=0.3)
        cmap = refresh(edge + inside, now=now, window_hours=24)
        assert cmap.breakpoints == (0.3,)

    def test_no_previous_and_empty_window_gives_none(self):
        assert refresh([], now=0, window_hours=24) is None


class TestCalibrationMapValidation:
    def test_breakpoints_must_ascend(self):
        with pytest.raises(ValueError):
            CalibrationMap(breakpoints=(0.3, 0.1), values=(0.1, 0.2))

    def test_values_must_be_non_decreasing(self):
        with pytest.raises(ValueError):
            CalibrationMap(breakpoints=(0.1, 0.3), values=(0.5, 0.2))

    def test_values_must_be_probabilities(self):
        with pytest.raises(ValueError):
            CalibrationMap(breakpoints=(0.1,), values=(1.5,))

    def test_round_trip_dict(self):
        cmap = CalibrationMap(breakpoints=(0.1, 0.3), values=(0.5, 1.0),
                              fitted_at=42.0, window_hours=12)
        assert CalibrationMap.from_dict(cmap.to_dict()) == cmap


def test_calibration_recovers_monotone_link():
    """Outcomes drawn as Bernoulli(g(score)) for monotone g: the fitted map
    should approach g as the sample grows."""
    rng = np.random.default_rng(7)

    def g(x):
        return 0.1 + 0.8 * x ** 2

    def mean_abs_error(n):
        scores = rng.random(n)
        outcomes = (rng.random(n) < g(scores)).astype(int)
        cmap = fit_isotonic(list(zip(scores.tolist(), outcomes.tolist())))
        grid = rng.random(2000)
        err = [abs(apply_calibration(cmap, x) - g(x)) for x in grid]
        return float(np.mean(err))

    small, large = mean_abs_error(400), mean_abs_error(20000)
    assert large < small
    assert large < 0.03
