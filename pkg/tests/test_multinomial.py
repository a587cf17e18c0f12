"""Tests for the multinomial core: exact law, sampling, moments, widths."""

import itertools
import math

import numpy as np
import pytest

from ervar.errors import ValidationError
from ervar.multinomial import (
    ChebyshevWidths,
    ExperimentConfig,
    FrequencyVector,
    TrialCounts,
    chebyshev_widths,
    derive_rng,
    frequency_moments,
    multinomial_pmf,
    relative_frequencies,
    sample_trials,
)


def count_vectors(order, trials):
    """All count vectors of the given order summing to trials (brute force)."""
    for head in itertools.product(range(trials + 1), repeat=order - 1):
        rest = trials - sum(head)
        if rest >= 0:
            yield head + (rest,)


def pmf_by_factorials(counts, probs):
    """Independent oracle: plain factorial arithmetic, no log-space tricks."""
    coeff = math.factorial(sum(counts))
    for c in counts:
        coeff //= math.factorial(c)
    value = float(coeff)
    for c, p in zip(counts, probs):
        value *= p**c
    return value


class TestConfigValidation:
    def test_rejects_unnormalized_probabilities(self):
        with pytest.raises(ValidationError, match="sum"):
            ExperimentConfig(order=2, trials=10, probabilities=[0.5, 0.4])

    def test_rejects_negative_probability(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(order=2, trials=10, probabilities=[1.2, -0.2])

    def test_rejects_small_order_and_trials(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(order=1, trials=10, probabilities=[1.0])
        with pytest.raises(ValidationError):
            ExperimentConfig(order=2, trials=0, probabilities=[0.5, 0.5])

    def test_counts_must_sum_to_trials(self):
        with pytest.raises(ValidationError):
            TrialCounts([3, 4], trials=10)

    def test_frequencies_must_sit_on_grid(self):
        FrequencyVector([0.3, 0.7], trials=10)
        with pytest.raises(ValidationError, match="multiple"):
            FrequencyVector([0.33, 0.67], trials=10)
        # The idealized constructor is the documented escape hatch.
        ideal = FrequencyVector.ideal([1 / 3, 2 / 3], trials=10)
        assert not ideal.on_grid


class TestMultinomialPmf:
    def test_fair_binomial_split(self):
        config = ExperimentConfig(2, 2, [0.5, 0.5])
        assert multinomial_pmf(TrialCounts([1, 1], 2), config) == pytest.approx(0.5)

    def test_impossible_outcome_has_zero_probability(self):
        config = ExperimentConfig(3, 5, [0.5, 0.5, 0.0])
        assert multinomial_pmf(TrialCounts([2, 2, 1], 5), config) == 0.0

    def test_order_three_value_against_factorial_oracle(self):
        probs = (0.2, 0.3, 0.5)
        config = ExperimentConfig(3, 4, probs)
        value = multinomial_pmf(TrialCounts([1, 1, 2], 4), config)
        assert value == pytest.approx(pmf_by_factorials((1, 1, 2), probs), abs=1e-15)
        assert value == pytest.approx(12 * 0.2 * 0.3 * 0.25, abs=1e-15)

    @pytest.mark.parametrize(
        "order,trials,probs",
        [
            (2, 12, (0.3, 0.7)),
            (3, 9, (0.2, 0.3, 0.5)),
            (4, 7, (0.1, 0.2, 0.3, 0.4)),
            (4, 12, (0.25, 0.25, 0.25, 0.25)),
        ],
    )
    def test_normalization_by_enumeration(self, order, trials, probs):
        config = ExperimentConfig(order, trials, probs)
        total = sum(
            multinomial_pmf(TrialCounts(list(c), trials), config)
            for c in count_vectors(order, trials)
        )
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_matches_factorial_oracle_on_enumeration(self):
        probs = (0.15, 0.35, 0.5)
        config = ExperimentConfig(3, 6, probs)
        for counts in count_vectors(3, 6):
            got = multinomial_pmf(TrialCounts(list(counts), 6), config)
            want = pmf_by_factorials(counts, probs)
            assert got == pytest.approx(want, rel=1e-12, abs=1e-300)

    def test_large_trials_do_not_overflow(self):
        trials = 10**6
        config = ExperimentConfig(2, trials, [0.5, 0.5])
        counts = TrialCounts([trials // 2, trials // 2], trials)
        value = multinomial_pmf(counts, config)
        # Central binomial term ~ sqrt(2 / (pi N)).
        assert value == pytest.approx(math.sqrt(2 / (math.pi * trials)), rel=1e-5)

    def test_dimension_mismatch_rejected(self):
        config = ExperimentConfig(3, 4, [0.2, 0.3, 0.5])
        with pytest.raises(ValidationError):
            multinomial_pmf(TrialCounts([2, 2], 4), config)
        with pytest.raises(ValidationError):
            multinomial_pmf(TrialCounts([1, 1, 2], 4), ExperimentConfig(3, 5, [0.2, 0.3, 0.5]))


class TestSampling:
    def test_degenerate_distribution(self):
        config = ExperimentConfig(2, 50, [1.0, 0.0], seed=4)
        counts = sample_trials(config)
        assert counts.counts.tolist() == [50, 0]

    def test_identical_seed_identical_counts(self):
        config = ExperimentConfig(3, 1000, [0.2, 0.3, 0.5], seed=123)
        a = sample_trials(config)
        b = sample_trials(config)
        assert a.counts.tolist() == b.counts.tolist()

    def test_streams_differ_across_replications(self):
        config = ExperimentConfig(2, 1000, [0.5, 0.5], seed=7)
        draws = {tuple(sample_trials(config, replication=r).counts) for r in range(8)}
        assert len(draws) > 1

    def test_parallel_replications_match_serial(self):
        # Order of evaluation must not matter: streams depend only on indices.
        from concurrent.futures import ThreadPoolExecutor

        config = ExperimentConfig(3, 500, [0.2, 0.3, 0.5], seed=99)
        serial = [sample_trials(config, replication=r).counts.tolist() for r in range(16)]
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = list(
                pool.map(lambda r: sample_trials(config, replication=r).counts.tolist(), range(16))
            )
        assert serial == parallel

    def test_counts_sum_to_trials(self):
        config = ExperimentConfig(4, 137, [0.1, 0.2, 0.3, 0.4], seed=5)
        for r in range(20):
            counts = sample_trials(config, replication=r)
            assert int(counts.counts.sum()) == 137

    def test_frequency_concentrates_at_probability(self):
        # Half-half split observed within 5 standard deviations in >= 99% of
        # 1000 seeded replications (the normal tail makes misses vanishing).
        trials = 10**5
        config = ExperimentConfig(2, trials, [0.5, 0.5], seed=2024)
        delta = math.sqrt(0.25 / trials)
        hits = 0
        for r in range(1000):
            nu1 = sample_trials(config, replication=r).counts[0] / trials
            hits += abs(nu1 - 0.5) <= 5 * delta
        assert hits >= 990

    def test_sampling_moments_match_formulas(self):
        # Empirical mean and stddev over many replications against p and
        # sqrt(p(1-p)/N), within a 3/sqrt(R) relative band.
        reps = 10**5
        trials = 50
        p = 0.3
        rng = derive_rng(31415, 0, 0)
        nu = rng.binomial(trials, p, size=reps) / trials
        config = ExperimentConfig(2, trials, [p, 1 - p], seed=31415)
        mean, stddev = frequency_moments(config)
        rel = 3 / math.sqrt(reps)
        assert abs(nu.mean() - mean[0]) <= rel * mean[0]
        assert abs(nu.std(ddof=1) - stddev[0]) <= rel * stddev[0]


class TestFrequencies:
    def test_simple_division(self):
        freqs = relative_frequencies(TrialCounts([3, 7], 10))
        np.testing.assert_allclose(freqs.freqs, [0.3, 0.7])

    def test_endpoint(self):
        freqs = relative_frequencies(TrialCounts([0, 10], 10))
        np.testing.assert_allclose(freqs.freqs, [0.0, 1.0])

    def test_three_outcomes(self):
        freqs = relative_frequencies(TrialCounts([25, 25, 50], 100))
        np.testing.assert_allclose(freqs.freqs, [0.25, 0.25, 0.5])


class TestMoments:
    def test_half_half(self):
        mean, sd = frequency_moments(ExperimentConfig(2, 100, [0.5, 0.5]))
        np.testing.assert_allclose(mean, [0.5, 0.5])
        np.testing.assert_allclose(sd, [0.05, 0.05])

    def test_degenerate_outcome_has_zero_spread(self):
        _, sd = frequency_moments(ExperimentConfig(2, 100, [0.0, 1.0]))
        assert sd[0] == 0.0 and sd[1] == 0.0

    def test_skewed_binomial_value(self):
        # Exact binomial summation oracle for the closed form.
        trials, p = 100, 0.07
        _, sd = frequency_moments(ExperimentConfig(2, trials, [p, 1 - p]))
        config = ExperimentConfig(2, trials, [p, 1 - p])
        grid = np.arange(trials + 1)
        pmf = np.array(
            [multinomial_pmf(TrialCounts([k, trials - k], trials), config) for k in grid]
        )
        nu = grid / trials
        exact_var = float(pmf @ (nu - pmf @ nu) ** 2)
        assert sd[0] == pytest.approx(math.sqrt(exact_var), rel=1e-10)
        assert sd[0] == pytest.approx(0.025515, abs=5e-7)


class TestChebyshevWidths:
    def test_half_frequency_saturates_bound(self):
        widths = chebyshev_widths(0.5, 100, 2.0)
        assert widths.freq_width == pytest.approx(0.2)
        assert widths.freq_width_bound == pytest.approx(0.2)

    def test_stabilized_width_value(self):
        widths = chebyshev_widths(0.5, 100, 2.0)
        assert widths.stabilized_width == pytest.approx(2 / math.pi * 0.2, abs=1e-15)
        assert widths.stabilized_width == pytest.approx(0.12732, abs=5e-6)

    def test_ratio_is_two_over_pi(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            trials = int(rng.integers(1, 10**6))
            k = float(rng.uniform(1.0 + 1e-9, 50.0))
            widths = chebyshev_widths(0.3, trials, k)
            assert widths.stabilized_width / widths.freq_width_bound == pytest.approx(
                2 / math.pi, abs=1e-14
            )
            assert widths.stabilized_width < widths.freq_width_bound

    def test_endpoints_lose_only_the_data_width(self):
        widths = chebyshev_widths(0.0, 100, 2.0)
        assert widths.freq_width is None
        assert widths.freq_width_bound > 0 and widths.stabilized_width > 0

    def test_confidence_must_exceed_one(self):
        with pytest.raises(ValidationError):
            chebyshev_widths(0.5, 100, 1.0)
        with pytest.raises(ValidationError):
            ChebyshevWidths(0.1, 0.2, 0.1, confidence_k=0.5)

    @pytest.mark.parametrize("p", [0.07, 0.5])
    @pytest.mark.parametrize("k", [2.0, 3.0])
    def test_coverage_meets_chebyshev_guarantee(self, p, k):
        # |nu - p| <= k * stddev(nu) in at least 1 - 1/k^2 of replications.
        trials = 100
        config = ExperimentConfig(2, trials, [p, 1 - p], seed=777)
        _, sd = frequency_moments(config)
        reps = 2000
        hits = 0
        for r in range(reps):
            nu1 = sample_trials(config, replication=r).counts[0] / trials
            hits += abs(nu1 - p) <= k * sd[0]
        assert hits / reps >= 1 - 1 / k**2
