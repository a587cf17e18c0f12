"""Tests for exact-enumeration pushforward statistics and the sweep reports."""

import math

import numpy as np
import pytest

from ervar.errors import CapacityError, ValidationError
from ervar.invariance import (
    DEFAULT_P_GRID,
    SweepSpec,
    distribution_table,
    exact_pushforward_stddev,
    few_trials_report,
    invariance_sweep,
    mc_pushforward_stddev,
    target_stddev,
)


class TestExactPushforward:
    def test_frequency_matches_closed_form_exactly(self):
        for p in (0.07, 0.25, 0.5):
            exact = exact_pushforward_stddev(p, 100, "frequency")
            assert exact == pytest.approx(math.sqrt(p * (1 - p) / 100), abs=1e-12)

    def test_stabilized_transform_near_flat_target(self):
        exact = exact_pushforward_stddev(0.5, 100, "chi")
        assert exact == pytest.approx(1 / (math.pi * 10), rel=0.02)

    def test_extreme_probability_is_wider(self):
        assert exact_pushforward_stddev(0.93, 100, "chi") > exact_pushforward_stddev(
            0.5, 100, "chi"
        )

    def test_amplitude_target_at_large_trials(self):
        exact = exact_pushforward_stddev(0.5, 10**4, "psi")
        assert exact == pytest.approx(0.005, rel=5e-3)

    def test_capacity_limit(self):
        with pytest.raises(CapacityError):
            exact_pushforward_stddev(0.5, 10**6 + 1, "frequency")

    def test_probability_domain(self):
        with pytest.raises(ValidationError):
            exact_pushforward_stddev(0.0, 100, "chi")
        with pytest.raises(ValidationError):
            exact_pushforward_stddev(1.0, 100, "chi")

    def test_unknown_tag(self):
        with pytest.raises(ValidationError):
            exact_pushforward_stddev(0.5, 100, "cube_root")


class TestMonteCarlo:
    def test_matches_exact_within_three_percent(self):
        for transform in ("frequency", "chi", "psi"):
            exact = exact_pushforward_stddev(0.25, 100, transform)
            mc = mc_pushforward_stddev(0.25, 100, transform, 10**5, seed=42)
            assert mc == pytest.approx(exact, rel=0.03)

    def test_frequency_at_half(self):
        mc = mc_pushforward_stddev(0.5, 100, "frequency", 10**5, seed=1)
        assert mc == pytest.approx(0.05, rel=0.03)

    def test_deterministic_given_seed(self):
        a = mc_pushforward_stddev(0.3, 50, "chi", 2000, seed=9)
        b = mc_pushforward_stddev(0.3, 50, "chi", 2000, seed=9)
        assert a == b
        c = mc_pushforward_stddev(0.3, 50, "chi", 2000, seed=10)
        assert a != c

    def test_replication_floor(self):
        with pytest.raises(ValidationError):
            mc_pushforward_stddev(0.3, 50, "chi", 999, seed=0)


class TestSweep:
    def test_default_grid_flatness_of_stabilized_transform(self):
        report = invariance_sweep(SweepSpec(transform="chi", replications=0))
        by_p = {row.p: row for row in report.rows}
        middle = [by_p[p].exact_sd for p in (0.25, 0.50, 0.75)]
        spread = (max(middle) - min(middle)) / min(middle)
        assert spread < 0.02
        # Edges are wider than the middle but still close to target.
        assert by_p[0.07].exact_sd > by_p[0.50].exact_sd
        assert by_p[0.93].exact_sd > by_p[0.50].exact_sd

    def test_frequency_rows_follow_their_own_closed_form(self):
        report = invariance_sweep(SweepSpec(transform="frequency", replications=0))
        for row in report.rows:
            assert row.rel_departure == pytest.approx(0.0, abs=1e-12)
        by_p = {row.p: row for row in report.rows}
        ratio = by_p[0.07].exact_sd / by_p[0.50].exact_sd
        assert ratio == pytest.approx(math.sqrt(0.07 * 0.93) / 0.5, abs=1e-12)
        assert ratio == pytest.approx(0.51, abs=0.0003)

    def test_naive_transform_departs_beyond_quarter(self):
        report = invariance_sweep(SweepSpec(transform="naive_sqrt", replications=0))
        assert report.max_abs_departure() > 0.25

    def test_monte_carlo_column_and_determinism(self):
        spec = SweepSpec(transform="chi", replications=10**4, seed=3)
        report = invariance_sweep(spec)
        again = invariance_sweep(spec)
        assert [r.mc_sd for r in report.rows] == [r.mc_sd for r in again.rows]
        for row in report.rows:
            assert row.mc_sd == pytest.approx(row.exact_sd, rel=0.05)

    def test_oracle_agreement_on_default_sweep(self):
        # Monte Carlo within 3% of exact enumeration for every default cell.
        for transform in ("frequency", "chi"):
            report = invariance_sweep(SweepSpec(transform=transform, replications=10**5))
            for row in report.rows:
                assert row.mc_sd == pytest.approx(row.exact_sd, rel=0.03)

    def test_asymptotic_flattening(self):
        # Max departure of the stabilized transform over p in [0.1, 0.9]
        # shrinks as trials grow.
        grid = np.linspace(0.1, 0.9, 9)
        spreads = []
        for trials in (100, 1000, 10000):
            departures = [
                abs(exact_pushforward_stddev(p, trials, "chi") / target_stddev(p, trials, "chi") - 1)
                for p in grid
            ]
            spreads.append(max(departures))
        assert spreads[0] > spreads[1] > spreads[2]

    def test_naive_never_flattens(self):
        # Strict inequality at every tested N: the square-root amplitude
        # stays wider at p=0.1 than at p=0.9 and spreads more than the
        # stabilized transform does.
        for trials in (10, 100, 1000):
            naive_low = exact_pushforward_stddev(0.1, trials, "naive_sqrt")
            naive_high = exact_pushforward_stddev(0.9, trials, "naive_sqrt")
            assert naive_low > naive_high
            stab = [exact_pushforward_stddev(p, trials, "chi") for p in (0.1, 0.9)]
            naive_spread = (naive_low - naive_high) / naive_high
            stab_spread = abs(stab[0] - stab[1]) / min(stab)
            assert naive_spread > stab_spread

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            SweepSpec(p_grid=())
        with pytest.raises(ValidationError):
            SweepSpec(p_grid=(0.0, 0.5))
        with pytest.raises(ValidationError):
            SweepSpec(replications=100)
        with pytest.raises(ValidationError):
            SweepSpec(transform="identity")


class TestFewTrials:
    def test_extreme_probability_departs_more_than_center(self):
        report = few_trials_report((0.5, 0.07), trials=10, transforms=("chi",))
        by_p = {row.p: row for row in report.rows}
        assert abs(by_p[0.07].rel_departure) > abs(by_p[0.5].rel_departure)

    def test_extreme_probability_is_flagged(self):
        report = few_trials_report((0.07,), trials=10)
        assert all(row.flagged for row in report.rows if row.transform == "chi")
        assert report.flagged_rows()

    def test_departure_shrinks_with_trials(self):
        for transform in ("chi", "psi"):
            deps = [
                abs(
                    exact_pushforward_stddev(0.07, trials, transform)
                    / target_stddev(0.07, trials, transform)
                    - 1
                )
                for trials in (10, 100, 1000)
            ]
            assert deps[0] > deps[1] > deps[2]

    def test_covers_both_stabilized_transforms(self):
        report = few_trials_report((0.2, 0.8), trials=12)
        assert {row.transform for row in report.rows} == {"chi", "psi"}
        assert all(row.mc_sd is None for row in report.rows)

    def test_trials_ceiling(self):
        with pytest.raises(ValidationError):
            few_trials_report((0.5,), trials=21)


class TestDistributionTable:
    def test_probabilities_sum_to_one(self):
        values, probs = distribution_table(0.25, 50, "chi")
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert values.shape == probs.shape == (51,)

    def test_values_are_transformed_grid(self):
        values, _ = distribution_table(0.5, 10, "frequency")
        np.testing.assert_allclose(values, np.arange(11) / 10)

    def test_moments_agree_with_pushforward(self):
        values, probs = distribution_table(0.07, 100, "chi")
        mean = probs @ values
        sd = math.sqrt(probs @ (values - mean) ** 2)
        assert sd == pytest.approx(exact_pushforward_stddev(0.07, 100, "chi"), abs=1e-15)

    def test_complex_transform_rejected(self):
        with pytest.raises(ValidationError):
            distribution_table(0.5, 10, "psi")


def test_default_grid_is_the_five_point_sweep():
    assert DEFAULT_P_GRID == (0.07, 0.25, 0.50, 0.75, 0.93)
