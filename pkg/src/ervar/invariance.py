"""Verification of the invariance property by exact enumeration and Monte Carlo.

For a two-outcome experiment the full distribution over counts can be summed
exactly, so the pushforward standard deviation of any transform of the
frequency is available without sampling.  Exact enumeration is the oracle of
record here; Monte Carlo is a cross-check, never ground truth.

The sweep utilities reproduce the headline claim: across a grid of outcome
probabilities the stabilized transforms hold an (asymptotically) constant
standard deviation, the raw frequency does not, and the naive square-root
amplitude fails badly.  The few-trials report quantifies how far the
stabilized transforms drift from their targets when N is very small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import CapacityError, ValidationError
from .multinomial import derive_rng
from .transforms import (
    UNIT_REAL_PARAMS,
    RealERParams,
    amplitude,
    arc_length,
    real_er,
)

TRANSFORM_TAGS = ("frequency", "chi", "zeta", "psi", "naive_sqrt")
_COMPLEX_TAGS = frozenset({"psi"})

# Probability grid used throughout for flatness checks.
DEFAULT_P_GRID = (0.07, 0.25, 0.50, 0.75, 0.93)
DEFAULT_TRIALS = 100

# Exact enumeration walks all N+1 counts; refuse above this.
MAX_EXACT_TRIALS = 10**6

# Rows whose departure from target exceeds this are flagged in reports.
DEPARTURE_FLAG_THRESHOLD = 0.10

_MIN_REPLICATIONS = 10**3


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValidationError(f"probability must lie strictly in (0, 1), got {p}")


def _binomial_pmf(trials: int, p: float) -> np.ndarray:
    """Exact binomial probabilities for counts 0..N, via log-gamma."""
    counts = np.arange(trials + 1, dtype=float)
    log_pmf = (
        gammaln(trials + 1.0)
        - gammaln(counts + 1.0)
        - gammaln(trials - counts + 1.0)
        + xlogy(counts, p)
        + xlogy(trials - counts, 1.0 - p)
    )
    return np.exp(log_pmf)


def transform_values(nu: np.ndarray, transform: str, real_params: RealERParams = UNIT_REAL_PARAMS):
    """Apply a tagged transform to an array of frequencies."""
    if transform == "frequency":
        return np.asarray(nu, dtype=float)
    if transform == "chi":
        return real_er(nu, real_params)
    if transform == "zeta":
        return arc_length(nu)
    if transform == "psi":
        return amplitude(nu)
    if transform == "naive_sqrt":
        return np.sqrt(np.asarray(nu, dtype=float))
    raise ValidationError(f"unknown transform tag {transform!r}; valid: {TRANSFORM_TAGS}")


def target_stddev(
    p: float, trials: int, transform: str, real_params: RealERParams = UNIT_REAL_PARAMS
) -> float:
    """Asymptotic standard deviation the transform is held against.

    The raw frequency's target is its own closed form sqrt(p(1-p)/N); the
    stabilized transforms have flat targets |scale|/sqrt(N) (arcsine; the arc
    length is the scale-1/2 case) and 1/(2 sqrt(N)) (amplitude).  The naive
    square-root amplitude is held against the flat amplitude target it would
    need, 1/(2 sqrt(N)) -- the whole point of the tag is that it misses it.
    """
    root_n = math.sqrt(trials)
    if transform == "frequency":
        return math.sqrt(p * (1.0 - p) / trials)
    if transform == "chi":
        return abs(real_params.scale) / root_n
    if transform == "zeta":
        return 0.5 / root_n
    if transform in ("psi", "naive_sqrt"):
        return 0.5 / root_n
    raise ValidationError(f"unknown transform tag {transform!r}; valid: {TRANSFORM_TAGS}")


def exact_pushforward_stddev(
    p: float,
    trials: int,
    transform: str,
    real_params: RealERParams = UNIT_REAL_PARAMS,
) -> float:
    """Standard deviation of transform(frequency) by exact summation over counts.

    For the complex amplitude the standard deviation is defined as
    sqrt(Var(Re) + Var(Im)), which tends to the 1/(2 sqrt(N)) target.
    """
    _check_p(p)
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    if trials > MAX_EXACT_TRIALS:
        raise CapacityError(
            f"exact enumeration supports trials <= {MAX_EXACT_TRIALS}, got {trials}"
        )
    pmf = _binomial_pmf(trials, p)
    nu = np.arange(trials + 1, dtype=float) / trials
    values = transform_values(nu, transform, real_params)
    if np.iscomplexobj(values):
        variance = _weighted_variance(values.real, pmf) + _weighted_variance(values.imag, pmf)
    else:
        variance = _weighted_variance(values, pmf)
    return math.sqrt(max(variance, 0.0))


def _weighted_variance(values: np.ndarray, weights: np.ndarray) -> float:
    mean = float(np.dot(weights, values))
    return float(np.dot(weights, (values - mean) ** 2))


def mc_pushforward_stddev(
    p: float,
    trials: int,
    transform: str,
    replications: int,
    seed: int,
    *,
    cell: int = 0,
    real_params: RealERParams = UNIT_REAL_PARAMS,
) -> float:
    """Sample standard deviation of transform(frequency) over seeded replications.

    Each call consumes the stream ``derive_rng(seed, cell)``; sweep builders
    assign one cell index per grid entry so cells can be evaluated in
    parallel and merged by grid order.
    """
    _check_p(p)
    if replications < _MIN_REPLICATIONS:
        raise ValidationError(
            f"Monte Carlo needs at least {_MIN_REPLICATIONS} replications, got {replications}"
        )
    rng = derive_rng(seed, cell)
    counts = rng.binomial(trials, p, size=replications)
    values = transform_values(counts / trials, transform, real_params)
    if np.iscomplexobj(values):
        variance = values.real.var(ddof=1) + values.imag.var(ddof=1)
    else:
        variance = values.var(ddof=1)
    return math.sqrt(float(variance))


@dataclass(frozen=True)
class SweepSpec:
    """Grid definition for an invariance sweep."""

    p_grid: tuple = DEFAULT_P_GRID
    trials: int = DEFAULT_TRIALS
    transform: str = "chi"
    replications: int = 10**5
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(p) for p in self.p_grid)
        if not grid:
            raise ValidationError("p_grid must be nonempty")
        for p in grid:
            _check_p(p)
        if self.transform not in TRANSFORM_TAGS:
            raise ValidationError(
                f"unknown transform tag {self.transform!r}; valid: {TRANSFORM_TAGS}"
            )
        if self.replications and self.replications < _MIN_REPLICATIONS:
            raise ValidationError(
                f"replications must be 0 (exact only) or >= {_MIN_REPLICATIONS}"
            )
        object.__setattr__(self, "p_grid", grid)


@dataclass(frozen=True)
class SweepRow:
    """One grid cell: exact, Monte Carlo, and target standard deviations."""

    p: float
    trials: int
    transform: str
    exact_sd: float
    mc_sd: float | None
    target_sd: float
    rel_departure: float

    @property
    def flagged(self) -> bool:
        return abs(self.rel_departure) > DEPARTURE_FLAG_THRESHOLD


@dataclass(frozen=True)
class SweepReport:
    """Sweep rows plus the metadata needed to reproduce them."""

    rows: tuple
    trials: int
    transform: str | None
    seed: int | None

    def flagged_rows(self) -> tuple:
        return tuple(row for row in self.rows if row.flagged)

    def max_abs_departure(self) -> float:
        return max(abs(row.rel_departure) for row in self.rows)


def _build_row(p, trials, transform, mc_sd, real_params) -> SweepRow:
    exact = exact_pushforward_stddev(p, trials, transform, real_params)
    target = target_stddev(p, trials, transform, real_params)
    return SweepRow(
        p=float(p),
        trials=trials,
        transform=transform,
        exact_sd=exact,
        mc_sd=mc_sd,
        target_sd=target,
        rel_departure=exact / target - 1.0,
    )


def invariance_sweep(spec: SweepSpec, real_params: RealERParams = UNIT_REAL_PARAMS) -> SweepReport:
    """One row per grid probability: exact, Monte Carlo, and target stddevs.

    Cells are independent; cell i uses the stream ``(spec.seed, i)`` and rows
    are merged in grid order, so a parallel evaluation gives identical output.
    """
    rows = []
    for i, p in enumerate(spec.p_grid):
        mc_sd = None
        if spec.replications:
            mc_sd = mc_pushforward_stddev(
                p,
                spec.trials,
                spec.transform,
                spec.replications,
                spec.seed,
                cell=i,
                real_params=real_params,
            )
        rows.append(_build_row(p, spec.trials, spec.transform, mc_sd, real_params))
    return SweepReport(tuple(rows), spec.trials, spec.transform, spec.seed)


def few_trials_report(
    p_grid,
    trials: int,
    transforms: tuple = ("chi", "psi"),
    real_params: RealERParams = UNIT_REAL_PARAMS,
) -> SweepReport:
    """Finite-N departure of the stabilized transforms at very small N.

    Exact enumeration only (no Monte Carlo).  Rows whose relative departure
    from the flat target exceeds 10% report ``flagged`` as True; extreme
    probabilities at N of order 10 routinely trip this.
    """
    if trials > 20:
        raise ValidationError(f"few-trials report is for trials <= 20, got {trials}")
    rows = []
    for transform in transforms:
        if transform not in TRANSFORM_TAGS:
            raise ValidationError(f"unknown transform tag {transform!r}")
        for p in p_grid:
            rows.append(_build_row(float(p), trials, transform, None, real_params))
    meta_transform = transforms[0] if len(transforms) == 1 else None
    return SweepReport(tuple(rows), trials, meta_transform, None)


def distribution_table(
    p: float,
    trials: int,
    transform: str,
    real_params: RealERParams = UNIT_REAL_PARAMS,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of a real-valued transform: (values, probabilities).

    One entry per count 0..N, in increasing count order.  Complex transforms
    have no single real value column; request their real-valued counterparts
    instead.
    """
    _check_p(p)
    if trials > MAX_EXACT_TRIALS:
        raise CapacityError(
            f"exact enumeration supports trials <= {MAX_EXACT_TRIALS}, got {trials}"
        )
    if transform in _COMPLEX_TAGS:
        raise ValidationError(
            f"distribution tables require a real-valued transform, not {transform!r}"
        )
    pmf = _binomial_pmf(trials, p)
    nu = np.arange(trials + 1, dtype=float) / trials
    values = transform_values(nu, transform, real_params)
    return np.asarray(values, dtype=float), pmf
