"""Shaping the error covariance of continuously monitored linear Gaussian systems
by parametric modulation, for the estimation of impulse-like forces."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("impulse-shaping")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .gaussian import (
    CollapseSet,
    GaussianMoments,
    SymplecticForm,
    SystemMatrices,
    build_symplectic,
    check_uncertainty,
    matrices_from_collapse,
    uncertainty_margin,
)
from .impulse import ImpulseProblem, combined_covariance, projected_variance, uncertainty_timetrace
from .ocp import (
    ControlProtocol,
    CovarianceShaper,
    OcpConfig,
    OcpResult,
    evaluate_cost,
    gradient,
    horizon,
    optimize,
    rectangular_protocol,
)
from .riccati import (
    BACKWARD,
    FORWARD,
    CovarianceTrajectory,
    TimeGrid,
    integrate,
    rhs_backward,
    rhs_forward,
    steady_state,
)
from .systems import (
    NEMS_REFERENCE,
    PARTICLE_REFERENCE,
    NemsParams,
    ParametricModel,
    ParticleParams,
    nems_model,
    particle_model,
    unconditional_covariance,
)
