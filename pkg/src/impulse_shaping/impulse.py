"""Impulse-estimation error covariance and its projection on the kick direction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, NormalizationError, ShapeError, ValidityError
from .gaussian import symmetrize

MOMENTUM_KICK = (0.0, 1.0)


def _unit(n, tol=1e-12):
    n = np.asarray(n, dtype=float).ravel()
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > tol:
        raise NormalizationError(f"direction must have unit norm, got |n| = {norm!r}")
    return n


@dataclass(frozen=True)
class ImpulseProblem:
    """Kick of size ``alpha`` along unit vector ``n`` at time ``t_p`` inside ``[0, T]``."""

    t_p: float
    T: float
    n: np.ndarray = MOMENTUM_KICK
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.t_p < self.T:
            raise ValueError(f"need 0 < t_p < T, got t_p={self.t_p}, T={self.T}")
        n = _unit(self.n).copy()
        n.flags.writeable = False
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "t_p", float(self.t_p))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def kick(self):
        return self.alpha * self.n


def combined_covariance(S_fwd, P_back):
    """Error covariance of the impulse estimate: ``S_fwd + P_back``."""
    S = np.atleast_2d(np.asarray(S_fwd, dtype=float))
    P = np.atleast_2d(np.asarray(P_back, dtype=float))
    if S.shape != P.shape:
        raise ShapeError(f"forward {S.shape} and backward {P.shape} covariances differ in shape")
    return symmetrize(S + P)


def projected_variance(S, n):
    """``n^T S n`` for a unit vector ``n``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = _unit(n)
    if S.shape != (n.size, n.size):
        raise ShapeError(f"covariance {S.shape} does not match direction of length {n.size}")
    v = float(n @ S @ n)
    if v < 0.0:
        if v < -1e-10 * max(abs(np.trace(S)), 1.0):
            raise ValidityError(f"covariance has negative variance {v} along n")
        v = 0.0
    return v


def uncertainty_timetrace(fwd, back, n):
    """``(t, sqrt(n^T (S(t) + P(t)) n))`` at every node shared by both trajectories.

    Returns
    -------
    times, sigma : ndarray
    """
    if not fwd.grid.same_as(back.grid):
        raise AlignmentError("forward and backward trajectories are on different grids")
    n = _unit(n)
    var = fwd.projected(n) + back.projected(n)
    return fwd.grid.nodes, np.sqrt(np.maximum(var, 0.0))
