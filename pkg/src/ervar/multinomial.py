"""Multinomial trials: exact probability law, seeded sampling, moments, interval widths.

A single probabilistic experiment has ``order`` possible outcomes with fixed
but unknown probabilities.  Running ``trials`` independent repetitions yields
a count vector, and the relative frequencies are the raw random variables
everything else in this package is built on.

Reproducibility contract: all sampling goes through :func:`derive_rng`, which
maps ``seed -> (experiment, replication)`` onto independent Philox streams.
Replications may therefore run in parallel, in any order, and still reproduce
bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import ValidationError

# Probability vectors must sum to 1 this tightly; out-of-tolerance input is
# rejected, never silently renormalized.
PROB_SUM_TOL = 1e-12

# Relative frequencies must sit on the 1/N grid this tightly (absolute, in
# units of counts).
_GRID_TOL = 1e-9

_MAX_SEED = 2**64


def derive_rng(seed: int, experiment: int = 0, replication: int = 0) -> np.random.Generator:
    """Return the Philox stream for ``(seed, experiment, replication)``.

    Distinct coordinates give statistically independent streams, so callers
    can hand one stream to each parallel replication and merge results in any
    order without losing determinism.
    """
    if not 0 <= int(seed) < _MAX_SEED:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(experiment), int(replication)))
    return np.random.Generator(np.random.Philox(ss))


def _readonly(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ExperimentConfig:
    """Ground truth of one experiment: outcome count, trials, probabilities, seed."""

    order: int
    trials: int
    probabilities: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.order < 2:
            raise ValidationError(f"order must be >= 2, got {self.order}")
        if self.trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= int(self.seed) < _MAX_SEED:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        p = _readonly(self.probabilities, float)
        if p.shape != (self.order,):
            raise ValidationError(
                f"probabilities has shape {p.shape}, expected ({self.order},)"
            )
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(
                f"probabilities sum to {total!r}, not 1 within {PROB_SUM_TOL}"
            )
        object.__setattr__(self, "probabilities", p)


@dataclass(frozen=True)
class TrialCounts:
    """Outcome counts of one experiment; they sum to the trial count exactly."""

    counts: np.ndarray
    trials: int

    def __post_init__(self):
        counts = _readonly(self.counts, np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise ValidationError("counts must be a vector of length >= 2")
        if np.any(counts < 0):
            raise ValidationError("counts must be non-negative")
        if int(counts.sum()) != int(self.trials):
            raise ValidationError(
                f"counts sum to {int(counts.sum())}, expected trials = {self.trials}"
            )
        object.__setattr__(self, "counts", counts)

    @property
    def order(self) -> int:
        return self.counts.size


@dataclass(frozen=True)
class FrequencyVector:
    """Relative frequencies of one experiment (counts divided by trials)."""

    freqs: np.ndarray
    trials: int
    # Idealized vectors (infinite-data limit) skip the 1/N grid check.
    on_grid: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        f = _readonly(self.freqs, float)
        if f.ndim != 1 or f.size < 2:
            raise ValidationError("freqs must be a vector of length >= 2")
        if self.trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        if np.any(f < 0.0) or np.any(f > 1.0):
            raise ValidationError("frequencies must lie in [0, 1]")
        if abs(float(f.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"frequencies sum to {float(f.sum())!r}, not 1")
        if self.on_grid:
            scaled = f * self.trials
            if np.any(np.abs(scaled - np.rint(scaled)) > _GRID_TOL):
                raise ValidationError(
                    "each frequency must be an integer multiple of 1/trials"
                )
        object.__setattr__(self, "freqs", f)

    @classmethod
    def ideal(cls, probabilities, trials: int) -> "FrequencyVector":
        """Frequencies equal to exact probabilities (noiseless limit, off the 1/N grid)."""
        return cls(probabilities, trials, on_grid=False)

    @property
    def order(self) -> int:
        return self.freqs.size


@dataclass(frozen=True)
class ChebyshevWidths:
    """Interval widths from Chebyshev's inequality at confidence parameter k.

    ``freq_width`` pins down the unknown outcome probability from an observed
    frequency; it is undefined (None) at frequency 0 or 1.  ``freq_width_bound``
    is its data-free upper bound k/sqrt(N).  ``stabilized_width`` is the
    data-free width for the arcsine-stabilized variable, (2/pi) k/sqrt(N),
    always narrower than the bound.
    """

    freq_width: float | None
    freq_width_bound: float
    stabilized_width: float
    confidence_k: float

    def __post_init__(self):
        if not self.confidence_k > 1.0:
            raise ValidationError(
                f"confidence parameter must exceed 1, got {self.confidence_k}"
            )
        for name in ("freq_width", "freq_width_bound", "stabilized_width"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ValidationError(f"{name} must be non-negative, got {value}")


def multinomial_pmf(counts: TrialCounts, config: ExperimentConfig) -> float:
    """Exact probability of observing ``counts`` under ``config``.

    Computed in log space (log-gamma) so trial counts up to 1e6 do not
    overflow.  Summed over all count vectors with the same total, the values
    add up to 1.
    """
    if counts.trials != config.trials:
        raise ValidationError(
            f"counts.trials = {counts.trials} != config.trials = {config.trials}"
        )
    if counts.order != config.order:
        raise ValidationError(
            f"counts has {counts.order} outcomes, config has {config.order}"
        )
    L = counts.counts.astype(float)
    log_coeff = gammaln(config.trials + 1.0) - gammaln(L + 1.0).sum()
    # xlogy(0, 0) = 0 handles impossible-but-unused outcomes; L > 0 with
    # p == 0 gives -inf and hence probability 0.
    log_prob = xlogy(L, config.probabilities).sum()
    value = float(np.exp(log_coeff + log_prob))
    return min(value, 1.0)


def sample_trials(
    config: ExperimentConfig, *, experiment: int = 0, replication: int = 0
) -> TrialCounts:
    """Draw one count vector of ``config.trials`` i.i.d. trials.

    Sampling decomposes the multinomial into a chain of conditional binomials,
    one outcome at a time, so each marginal is exact.  The stream is
    ``derive_rng(config.seed, experiment, replication)``; identical coordinates
    reproduce bit-identical counts.
    """
    rng = derive_rng(config.seed, experiment, replication)
    p = config.probabilities
    remaining = int(config.trials)
    mass_left = 1.0
    counts = np.zeros(config.order, dtype=np.int64)
    for j in range(config.order - 1):
        if remaining == 0:
            break
        if mass_left <= 0.0:
            break
        cond = min(1.0, max(0.0, float(p[j]) / mass_left))
        drawn = int(rng.binomial(remaining, cond))
        counts[j] = drawn
        remaining -= drawn
        mass_left -= float(p[j])
    counts[config.order - 1] = remaining
    return TrialCounts(counts, config.trials)


def relative_frequencies(counts: TrialCounts) -> FrequencyVector:
    """Counts divided by trials."""
    return FrequencyVector(counts.counts / counts.trials, counts.trials)


def frequency_moments(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation of each relative frequency.

    The mean is the outcome probability itself; the standard deviation is
    sqrt(p (1 - p) / N).
    """
    p = config.probabilities
    mean = p.copy()
    stddev = np.sqrt(p * (1.0 - p) / config.trials)
    return mean, stddev


def chebyshev_widths(nu: float, trials: int, confidence_k: float) -> ChebyshevWidths:
    """Interval widths pinning down the unknown limits at confidence ``k``.

    ``freq_width`` = 2 k sqrt(nu (1 - nu) / N) requires nu strictly inside
    (0, 1); at the endpoints it is returned as None while the data-free widths
    are still available.
    """
    if not confidence_k > 1.0:
        raise ValidationError(
            f"confidence parameter must exceed 1, got {confidence_k}"
        )
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    if not 0.0 <= nu <= 1.0:
        raise ValidationError(f"frequency must lie in [0, 1], got {nu}")
    root_n = math.sqrt(trials)
    bound = confidence_k / root_n
    stabilized = (2.0 / math.pi) * confidence_k / root_n
    if nu in (0.0, 1.0):
        freq_width = None
    else:
        freq_width = 2.0 * confidence_k * math.sqrt(nu * (1.0 - nu) / trials)
    return ChebyshevWidths(freq_width, bound, stabilized, confidence_k)
