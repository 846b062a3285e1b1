"""Parametric single-mode models: a thermally driven NEMS resonator and a levitated nanoparticle.

Both models work in zero-point-scaled (dimensionless) quadratures with time
in seconds.  The modulation parameter ``p`` is dimensionless.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, ConfigError
from .gaussian import SystemMatrices

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K

DEFAULT_BOUNDS = (-0.4, 0.4)


def thermal_force_psd(temperature, gamma, mass):
    """Single-sided thermal force PSD ``4 k_B T Gamma m`` in N^2/Hz."""
    return 4.0 * K_B * temperature * gamma * mass


def zero_point_scales(mass, omega0):
    """Return ``(q_zpf, p_zpf)`` in metres and kg m/s."""
    return math.sqrt(HBAR / (mass * omega0)), math.sqrt(HBAR * mass * omega0)


def _check_bounds(bounds):
    lo, hi = (float(b) for b in bounds)
    if not lo < hi:
        raise ConfigError(f"p_bounds must satisfy p_min < p_max, got {bounds}")
    if 1.0 + lo <= 0.0:
        raise ConfigError(f"p_min = {lo} makes 1 + p non-positive")
    return lo, hi


def _positive(**kw):
    for name, val in kw.items():
        if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
            raise ConfigError(f"{name} must be a positive finite number, got {val!r}")


@dataclass(frozen=True)
class NemsParams:
    """Nanomechanical resonator with spring-stiffness modulation.

    ``S_f`` defaults to :func:`thermal_force_psd` of the other fields when
    left as ``None``.
    """

    Omega0: float
    Gamma: float
    mass: float
    temperature: float
    S_m: float
    S_f: float | None = None
    p_bounds: tuple[float, float] = DEFAULT_BOUNDS

    def __post_init__(self):
        _positive(Omega0=self.Omega0, Gamma=self.Gamma, mass=self.mass,
                  temperature=self.temperature, S_m=self.S_m)
        if self.S_f is not None:
            _positive(S_f=self.S_f)
        object.__setattr__(self, "p_bounds", _check_bounds(self.p_bounds))

    @property
    def force_psd(self):
        if self.S_f is not None:
            return float(self.S_f)
        return thermal_force_psd(self.temperature, self.Gamma, self.mass)


@dataclass(frozen=True)
class ParticleParams:
    """Optically levitated particle with trap-power modulation.

    ``mass`` does not enter the scaled model and is kept for bookkeeping.
    """

    Omega0: float
    Gamma: float
    kappa0: float
    eta_hom: float
    p_bounds: tuple[float, float] = DEFAULT_BOUNDS
    mass: float | None = None

    def __post_init__(self):
        _positive(Omega0=self.Omega0, Gamma=self.Gamma, kappa0=self.kappa0)
        if not 0.0 < self.eta_hom <= 1.0:
            raise ConfigError(f"eta_hom must lie in (0, 1], got {self.eta_hom}")
        object.__setattr__(self, "p_bounds", _check_bounds(self.p_bounds))


# 33.7 kHz resonator at room temperature with interferometric readout.
NEMS_REFERENCE = NemsParams(
    Omega0=2 * math.pi * 33.7e3,
    Gamma=2.07,
    mass=2.8e-12,
    temperature=295.0,
    S_f=5.3e-31,
    S_m=4e-28,
)

# 104 kHz tweezer, 41 kHz measurement rate, 40 % detection efficiency.
PARTICLE_REFERENCE = ParticleParams(
    Omega0=2 * math.pi * 104e3,
    Gamma=0.64,
    kappa0=41e3,
    eta_hom=0.4,
    mass=4.5e-18,
)


@dataclass(frozen=True)
class ParametricModel:
    """Map from a scalar modulation parameter to system matrices."""

    evaluate: Callable[[float], SystemMatrices] = field(repr=False)
    bounds: tuple[float, float]
    omega0: float
    name: str = "model"
    n_modes: int = 1

    def __call__(self, p):
        return self.evaluate(p)

    @property
    def reference_period(self):
        return 2.0 * math.pi / self.omega0

    def instantaneous_frequency(self, p):
        """Oscillation frequency ``sqrt(-A01 A10)`` of the undamped drift at ``p``."""
        A = self.evaluate(p).A
        return math.sqrt(max(-A[0, 1] * A[1, 0], 0.0))

    def clip(self, p):
        return np.clip(p, self.bounds[0], self.bounds[1])


def nems_model(params: NemsParams):
    """Resonator whose restoring term scales as ``1 + p``.

    ``A = [[0, W], [-W (1+p), -Gamma]]``, ``C = [q_zpf / sqrt(S_m), 0]``,
    ``Q = diag(0, S_f / p_zpf^2)``, ``eta = 1``, ``N = 0``.
    """
    W = params.Omega0
    if K_B * params.temperature < 10.0 * HBAR * W:
        warnings.warn(
            "k_B T is not much larger than hbar Omega0; the classical thermal-noise model is "
            "outside its regime of validity",
            RuntimeWarning,
            stacklevel=2,
        )
    q_zpf, p_zpf = zero_point_scales(params.mass, W)
    c = q_zpf / math.sqrt(params.S_m)
    q = params.force_psd / p_zpf**2
    C = np.array([[c, 0.0]])
    Q = np.diag([0.0, q])
    lo, hi = params.p_bounds

    def evaluate(p):
        p = float(p)
        if not lo <= p <= hi:
            raise AdmissibilityError(f"p = {p} outside admissible interval [{lo}, {hi}]")
        A = np.array([[0.0, W], [-W * (1.0 + p), -params.Gamma]])
        return SystemMatrices(A=A, C=C, Q=Q, eta=1.0)

    return ParametricModel(evaluate=evaluate, bounds=(lo, hi), omega0=W, name="nems")


def particle_model(params: ParticleParams):
    """Levitated particle with laser power ``P0 (1 + p)``.

    ``A = [[0, W], [-W sqrt(1+p), -Gamma]]``, ``C = [sqrt(8 kappa0 (1+p)), 0]``,
    ``Q = diag(0, 2 kappa0 (1+p))``, ``eta = eta_hom``, ``N = 0``.
    """
    W = params.Omega0
    k0 = params.kappa0

    def evaluate(p):
        p = float(p)
        if not 1.0 + p > 0.0:
            raise AdmissibilityError(f"p = {p} gives non-positive laser power")
        s = 1.0 + p
        A = np.array([[0.0, W], [-W * math.sqrt(s), -params.Gamma]])
        C = np.array([[math.sqrt(8.0 * k0 * s), 0.0]])
        Q = np.diag([0.0, 2.0 * k0 * s])
        return SystemMatrices(A=A, C=C, Q=Q, eta=params.eta_hom)

    return ParametricModel(evaluate=evaluate, bounds=params.p_bounds, omega0=W, name="particle")


def unconditional_covariance(M: SystemMatrices):
    """Stationary covariance without measurement: solves ``A X + X A^T + Q = 0``."""
    d = M.dim
    eye = np.eye(d)
    L = np.kron(eye, M.A) + np.kron(M.A, eye)
    X = np.linalg.solve(L, -M.Q.reshape(-1, order="F")).reshape(d, d, order="F")
    return 0.5 * (X + X.T)
