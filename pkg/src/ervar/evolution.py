"""Linear norm-preserving evolution of amplitude vectors.

Demanding that predicted amplitudes stay normalized forces the evolution
generator to have a purely imaginary diagonal and antisymmetric-conjugate
off-diagonal pairs (g_sj = -conj(g_js)), i.e. to be anti-Hermitian, so the
exact propagator exp(G t) is unitary.  The propagator is built from the
eigendecomposition of the Hermitian matrix i G, which keeps the norm to
machine precision.

A generator of dimension K carries K^2 - 1 real parameters once the trace (a
global phase rate, invisible in probabilities) is fixed to zero; the
parameter layout is documented in :func:`generator_from_params`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LargeStepWarning, ValidationError
from .transforms import StateVector

# Constraint tolerance on the generator's structure.
CONSTRAINT_TOL = 1e-12
# Norm tolerance on predicted amplitude vectors.
PREDICTED_NORM_TOL = 1e-10


@dataclass(frozen=True)
class Generator:
    """Square complex matrix with imaginary diagonal and g_sj = -conj(g_js)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValidationError(f"generator must be a square matrix of size >= 2, got {m.shape}")
        if np.any(np.abs(m.diagonal().real) > CONSTRAINT_TOL):
            raise ValidationError("diagonal entries must be purely imaginary")
        if np.any(np.abs(m + m.conj().T) > CONSTRAINT_TOL):
            raise ValidationError("entries must satisfy g_sj = -conj(g_js)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm(self) -> float:
        """Spectral norm; 1/norm is the natural time scale of the evolution."""
        return float(np.linalg.norm(self.matrix, 2))


@dataclass(frozen=True)
class GeneratorParams:
    """Real parameter vector of a zero-trace generator (length dimension^2 - 1)."""

    values: np.ndarray
    dimension: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = self.dimension**2 - 1
        if values.shape != (expected,):
            raise ValidationError(
                f"expected {expected} parameters for dimension {self.dimension}, "
                f"got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class PredictedState:
    """Normalized amplitude vector at a given time."""

    amplitudes: np.ndarray
    time: float

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.ndim != 1 or amps.size < 2:
            raise ValidationError("amplitudes must be a vector of length >= 2")
        norm_sq = float(np.sum(np.abs(amps) ** 2))
        if abs(norm_sq - 1.0) > PREDICTED_NORM_TOL:
            raise ValidationError(
                f"squared norm is {norm_sq!r}, not 1 within {PREDICTED_NORM_TOL}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dimension(self) -> int:
        return self.amplitudes.size


def _matrix_from_params(values: np.ndarray, dimension: int) -> np.ndarray:
    """Parameter layout: K-1 diagonal rates (the K-th balances the trace to
    zero), then (Re, Im) of each upper off-diagonal entry in row-major order."""
    m = np.zeros((dimension, dimension), dtype=complex)
    diag = np.append(values[: dimension - 1], -values[: dimension - 1].sum())
    np.fill_diagonal(m, 1j * diag)
    idx = dimension - 1
    for s in range(dimension):
        for j in range(s + 1, dimension):
            x, y = values[idx], values[idx + 1]
            idx += 2
            m[s, j] = x + 1j * y
            m[j, s] = -x + 1j * y
    return m


def generator_from_params(params: GeneratorParams) -> Generator:
    """Build the zero-trace generator encoded by a real parameter vector.

    The map is a bijection onto zero-trace matrices satisfying the generator
    constraints and round-trips with :func:`params_from_generator`.
    """
    return Generator(_matrix_from_params(params.values, params.dimension))


def params_from_generator(generator: Generator) -> GeneratorParams:
    """Inverse of :func:`generator_from_params`; requires zero trace."""
    m = generator.matrix
    dim = generator.dimension
    trace = complex(m.trace())
    if abs(trace) > dim * CONSTRAINT_TOL * 10:
        raise ValidationError(
            f"generator trace {trace!r} is not zero; project out the global "
            "phase rate first (subtract trace/dimension from the diagonal)"
        )
    values = np.empty(dim**2 - 1, dtype=float)
    values[: dim - 1] = m.diagonal().imag[: dim - 1]
    idx = dim - 1
    for s in range(dim):
        for j in range(s + 1, dim):
            values[idx] = m[s, j].real
            values[idx + 1] = m[s, j].imag
            idx += 2
    return GeneratorParams(values, dim)


def traceless_part(generator: Generator) -> Generator:
    """Remove the trace (an unobservable global phase rate) from a generator."""
    m = generator.matrix.copy()
    dim = generator.dimension
    shift = m.trace() / dim
    np.fill_diagonal(m, m.diagonal() - shift)
    # Round away the ~1e-16 real residue the subtraction leaves on the diagonal.
    np.fill_diagonal(m, 1j * m.diagonal().imag)
    return Generator(m)


def _amplitudes_of(state) -> np.ndarray:
    if isinstance(state, (StateVector, PredictedState)):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def propagator(generator: Generator, t: float) -> np.ndarray:
    """Unitary matrix exp(G t), via the eigendecomposition of the Hermitian i G.

    Exact unitarity (to machine rounding) is what keeps the norm preserved
    over long times, which a truncated series would not guarantee.
    """
    eigvals, eigvecs = np.linalg.eigh(1j * generator.matrix)
    phases = np.exp(-1j * eigvals * t)
    return (eigvecs * phases) @ eigvecs.conj().T


def evolve(state0, generator: Generator, t: float) -> PredictedState:
    """Evolve an initial amplitude vector for time t: exp(G t) applied to it.

    The generator is time-independent.  Accepts a StateVector, a
    PredictedState, or a plain complex vector.
    """
    amps = _amplitudes_of(state0)
    if amps.size != generator.dimension:
        raise ValidationError(
            f"state has {amps.size} components, generator dimension is {generator.dimension}"
        )
    return PredictedState(propagator(generator, t) @ amps, float(t))


def evolve_step(state: PredictedState, generator: Generator, dt: float) -> PredictedState:
    """First-order step (1 + G dt) followed by renormalization.

    Kept as the pedagogical single step; :func:`evolve` is the operation of
    record.  The norm drift removed by the renormalization is O(dt^2).  Warns
    when dt exceeds 0.1 / norm(G).
    """
    amps = _amplitudes_of(state)
    if amps.size != generator.dimension:
        raise ValidationError(
            f"state has {amps.size} components, generator dimension is {generator.dimension}"
        )
    norm_g = generator.norm
    if norm_g > 0.0 and abs(dt) > 0.1 / norm_g:
        warnings.warn(
            f"step dt = {dt} exceeds 0.1/norm(G) = {0.1 / norm_g:.3g}; "
            "first-order error is no longer small",
            LargeStepWarning,
            stacklevel=2,
        )
    stepped = amps + dt * (generator.matrix @ amps)
    stepped = stepped / np.linalg.norm(stepped)
    time0 = state.time if isinstance(state, PredictedState) else 0.0
    return PredictedState(stepped, time0 + dt)


def predicted_probabilities(state: PredictedState) -> np.ndarray:
    """Squared moduli of the amplitudes; they sum to 1 by unitarity."""
    return np.abs(_amplitudes_of(state)) ** 2


@dataclass(frozen=True)
class ErrorBudget:
    """Trial counts of the auxiliary experiments and the linear map's row weights.

    ``row_magnitudes[m][s]`` is the summed squared magnitude of the
    coefficients carrying experiment m's amplitudes into output s.
    """

    trials: tuple
    row_magnitudes: tuple

    def __post_init__(self):
        trials = tuple(int(n) for n in self.trials)
        if not trials:
            raise ValidationError("at least one auxiliary experiment is required")
        if any(n < 1 for n in trials):
            raise ValidationError("every trial count must be >= 1")
        mags = tuple(np.asarray(m, dtype=float) for m in self.row_magnitudes)
        if len(mags) != len(trials):
            raise ValidationError(
                f"{len(mags)} magnitude rows for {len(trials)} experiments"
            )
        sizes = {m.shape for m in mags}
        if len(sizes) != 1 or any(m.ndim != 1 for m in mags):
            raise ValidationError("row magnitudes must be equal-length vectors")
        if any(np.any(m < 0.0) for m in mags):
            raise ValidationError("row magnitudes are squared sums, hence non-negative")
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "row_magnitudes", mags)

    @classmethod
    def from_rows(cls, coefficient_rows, trials) -> "ErrorBudget":
        """Budget from the raw linear-map blocks, one (Z x K_m) matrix per experiment."""
        mags = tuple(
            np.sum(np.abs(np.asarray(block, dtype=complex)) ** 2, axis=1)
            for block in coefficient_rows
        )
        return cls(tuple(trials), mags)

    def stddevs(self) -> np.ndarray:
        """Predicted-amplitude standard deviations.

        sqrt( sum_m (1 / 4 N_m) sum_j |a_sj^m|^2 ) for each output s: each
        auxiliary experiment contributes its amplitude variance 1/(4 N_m)
        through constant (linear-map) coefficients, and the Gaussian
        contributions convolve.
        """
        total = np.zeros_like(self.row_magnitudes[0])
        for n_m, mags in zip(self.trials, self.row_magnitudes):
            total = total + mags / (4.0 * n_m)
        return np.sqrt(total)


def prediction_stddev(coefficient_rows, budget) -> np.ndarray:
    """Standard deviations of linearly predicted amplitudes.

    ``coefficient_rows`` holds one (Z x K_m) coefficient block per auxiliary
    experiment; ``budget`` is an :class:`ErrorBudget` or simply the per
    experiment trial counts.  Strictly decreasing in every trial count
    wherever the corresponding row weight is positive: more input information
    always tightens every prediction.
    """
    if isinstance(budget, ErrorBudget):
        trials = budget.trials
    else:
        trials = tuple(int(n) for n in budget)
    return ErrorBudget.from_rows(coefficient_rows, trials).stddevs()
