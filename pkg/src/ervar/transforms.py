"""Efficient-random-variable transforms of relative frequencies.

A transform of the relative frequency is "efficient" when its standard
deviation becomes asymptotically independent of the unknown outcome
probability, scaling as constant/sqrt(N).  Two families realize this:

* the real arcsine map  ``scale * arcsin(2 nu - 1) + offset``, and
* the complex semicircle map ``scale * (sqrt(nu(1-nu)) + i nu) * exp(-i tilt)
  + offset``,

whose normalized special case is the probability amplitude with squared
modulus equal to the frequency.  The naive guess ``sqrt(nu) * exp(i alpha)``
does not have the invariance property; see :mod:`ervar.invariance` for the
quantitative comparison.

All functions accept scalars or numpy arrays and never clamp: out-of-domain
input raises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .multinomial import FrequencyVector

# Norm tolerance for state vectors (sum of squared moduli vs. 1).
STATE_NORM_TOL = 1e-10
# Consistency tolerance between stored amplitudes and their canonical form.
_CANON_TOL = 1e-12


def _canonical_angle(angle: float) -> float:
    """Reduce an angle to (-pi, pi]."""
    reduced = math.remainder(float(angle), math.tau)
    if reduced <= -math.pi:
        reduced += math.tau
    return reduced


@dataclass(frozen=True)
class RealERParams:
    """Scale and offset of the real arcsine transform; any nonzero scale works."""

    scale: float
    offset: float

    def __post_init__(self):
        if self.scale == 0.0:
            raise ValidationError("scale must be nonzero")


@dataclass(frozen=True)
class ComplexERParams:
    """Scale, tilt angle, and complex offset of the semicircle transform."""

    scale: float
    tilt: float
    offset: complex

    def __post_init__(self):
        if self.scale == 0.0:
            raise ValidationError("scale must be nonzero")
        object.__setattr__(self, "tilt", _canonical_angle(self.tilt))
        object.__setattr__(self, "offset", complex(self.offset))


# Confines the real transform to [0, 1], directly comparable with frequencies.
UNIT_REAL_PARAMS = RealERParams(scale=1.0 / math.pi, offset=0.5)
# Normalized complex transform: the probability amplitude.
UNIT_COMPLEX_PARAMS = ComplexERParams(scale=1.0, tilt=0.0, offset=0j)


def _check_unit_interval(nu: np.ndarray, what: str = "frequency") -> None:
    if np.any(nu < 0.0) or np.any(nu > 1.0):
        raise ValidationError(f"{what} must lie in [0, 1]")


def _match_shape(result: np.ndarray, scalar_input: bool):
    return result[()] if scalar_input else result


def real_er(nu, params: RealERParams = UNIT_REAL_PARAMS):
    """Real efficient random variable: scale * arcsin(2 nu - 1) + offset.

    Strictly increasing on [0, 1] for positive scale; endpoints are valid.
    With the default parameters the range is exactly [0, 1].
    """
    arr = np.asarray(nu, dtype=float)
    _check_unit_interval(arr)
    out = params.scale * np.arcsin(2.0 * arr - 1.0) + params.offset
    return _match_shape(out, np.isscalar(nu))


def real_er_inverse(x, params: RealERParams = UNIT_REAL_PARAMS):
    """Inverse of :func:`real_er`: nu = (1 + sin((x - offset)/scale)) / 2.

    The argument must map into the principal branch [-pi/2, pi/2].
    """
    arr = np.asarray(x, dtype=float)
    angle = (arr - params.offset) / params.scale
    half_pi = math.pi / 2.0
    if np.any(angle < -half_pi - 1e-12) or np.any(angle > half_pi + 1e-12):
        raise ValidationError("argument outside the principal branch of the transform")
    out = np.clip((1.0 + np.sin(angle)) / 2.0, 0.0, 1.0)
    return _match_shape(out, np.isscalar(x))


def arc_length(nu):
    """Position of nu along the unit-diameter semicircle, in [0, pi/2].

    Equals (pi + 2 arcsin(2 nu - 1)) / 4: the arc length swept from the
    frequency-0 end of the semicircle to the orthogonal projection of nu.
    """
    arr = np.asarray(nu, dtype=float)
    _check_unit_interval(arr)
    out = (math.pi + 2.0 * np.arcsin(2.0 * arr - 1.0)) / 4.0
    return _match_shape(out, np.isscalar(nu))


def complex_er(nu, params: ComplexERParams = UNIT_COMPLEX_PARAMS):
    """Complex efficient random variable on a scaled, tilted, shifted semicircle.

    scale * (sqrt(nu (1 - nu)) + i nu) * exp(-i tilt) + offset.
    """
    arr = np.asarray(nu, dtype=float)
    _check_unit_interval(arr)
    point = np.sqrt(arr * (1.0 - arr)) + 1j * arr
    out = params.scale * point * np.exp(-1j * params.tilt) + params.offset
    return _match_shape(out, np.isscalar(nu))


def amplitude(nu, phase: float = 0.0):
    """Probability amplitude: (sqrt(nu (1 - nu)) + i nu) exp(-i phase).

    The squared modulus reproduces the frequency exactly.
    """
    arr = np.asarray(nu, dtype=float)
    _check_unit_interval(arr)
    out = (np.sqrt(arr * (1.0 - arr)) + 1j * arr) * np.exp(-1j * np.asarray(phase))
    return _match_shape(out, np.isscalar(nu) and np.isscalar(phase))


def er_stddev_targets(trials: int, params: RealERParams = UNIT_REAL_PARAMS) -> tuple[float, float]:
    """Asymptotic standard deviations (real transform, amplitude) at N trials.

    |scale|/sqrt(N) for the real transform and 1/(2 sqrt(N)) for the
    amplitude.  These are large-N targets; finite-N pushforward values differ,
    most visibly near frequency 0 or 1.
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    root_n = math.sqrt(trials)
    return abs(params.scale) / root_n, 0.5 / root_n


@dataclass(frozen=True)
class StateVector:
    """Normalized vector of amplitudes, one per outcome, with its construction phases.

    The squared modulus of each component is the source frequency, so the
    vector is normalized whenever the frequencies sum to 1.
    """

    amplitudes: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        phases = np.array(self.phases, dtype=float)
        if amps.ndim != 1 or amps.shape != phases.shape:
            raise ValidationError("amplitudes and phases must be vectors of equal length")
        norm_sq = float(np.sum(np.abs(amps) ** 2))
        if abs(norm_sq - 1.0) > STATE_NORM_TOL:
            raise ValidationError(f"squared norm is {norm_sq!r}, not 1 within {STATE_NORM_TOL}")
        canonical = amplitude(np.abs(amps) ** 2, phases)
        if np.any(np.abs(amps - canonical) > _CANON_TOL):
            raise ValidationError(
                "amplitudes are not in canonical form for the stored phases"
            )
        amps.setflags(write=False)
        phases.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "phases", phases)

    @property
    def order(self) -> int:
        return self.amplitudes.size

    def frequencies(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def state_vector(freqs: FrequencyVector, phases) -> StateVector:
    """Amplitude representation of a frequency vector with the given phases."""
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (freqs.order,):
        raise ValidationError(
            f"phases has shape {phases.shape}, expected ({freqs.order},)"
        )
    return StateVector(amplitude(freqs.freqs, phases), phases)


def transform_table(
    nu_values,
    real_params: RealERParams = UNIT_REAL_PARAMS,
    phase: float = 0.0,
) -> np.ndarray:
    """Table of all transforms on a frequency grid.

    Columns: nu, real transform, arc length, Re(amplitude), Im(amplitude).
    Used for plot-ready CSV output.
    """
    nu = np.asarray(nu_values, dtype=float)
    _check_unit_interval(nu)
    psi = amplitude(nu, phase)
    return np.column_stack(
        [nu, real_er(nu, real_params), arc_length(nu), psi.real, psi.imag]
    )
