"""Forward and backward differential Riccati equations.

The forward flow propagates the filter covariance ``S`` in ordinary time::

    dS/dt = A S + S A^T + Q - (S C^T - N^T) eta (S C^T - N^T)^T

and the backward flow propagates the retrodiction covariance ``P`` in
reversed time ``tau = T - t``::

    dP/dtau = -A P - P A^T + Q - (P C^T + N^T) eta (P C^T + N^T)^T

Both are integrated with classic fixed-step RK4, holding the system matrices
constant over each step at their left-endpoint value.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    AlignmentError,
    IntegrationDivergedError,
    InvalidDimensionError,
    NoSteadyStateError,
    ShapeError,
    ValidityError,
)
from .gaussian import TOL_PSD, SystemMatrices, is_psd, is_symmetric, symmetrize

FORWARD = "forward"
BACKWARD = "backward"

_SIGNS = {FORWARD: (1.0, -1.0), BACKWARD: (-1.0, 1.0)}


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``steps + 1`` nodes on ``[t0, t1]``."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError(f"grid end {self.t1} must exceed start {self.t0}")
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise InvalidDimensionError(f"steps must be a positive integer, got {self.steps!r}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self):
        return (self.t1 - self.t0) / self.steps

    @property
    def nodes(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def index_of(self, t):
        """Index of the node nearest to ``t``."""
        k = int(round((t - self.t0) / self.dt))
        return min(max(k, 0), self.steps)

    def refine(self, factor):
        """Same span, ``factor`` times as many steps."""
        return TimeGrid(self.t0, self.t1, self.steps * int(factor))

    def same_as(self, other, rtol=1e-12):
        return (
            self.steps == other.steps
            and math.isclose(self.t0, other.t0, rel_tol=rtol, abs_tol=rtol * abs(self.dt))
            and math.isclose(self.t1, other.t1, rel_tol=rtol, abs_tol=rtol * abs(self.dt))
        )


@dataclass(frozen=True)
class CovarianceTrajectory:
    """Covariances at every node of ``grid`` (forward-time order)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 3 or vals.shape[0] != self.grid.steps + 1 or vals.shape[1] != vals.shape[2]:
            raise ShapeError(
                f"expected {self.grid.steps + 1} square matrices, got array of shape {vals.shape}"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def times(self):
        return self.grid.nodes

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def at(self, t):
        return self.values[self.grid.index_of(t)]

    def projected(self, n):
        """``n^T S(t) n`` at every node."""
        n = np.asarray(n, dtype=float)
        return np.einsum("i,kij,j->k", n, self.values, n)


def _check_pair(S, M):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (M.dim, M.dim):
        raise ShapeError(f"covariance {S.shape} does not match system dimension {M.dim}")
    return S


def rhs_forward(S, M):
    """Right-hand side of the forward (filter) Riccati equation."""
    S = _check_pair(S, M)
    G = S @ M.C.T - M.N.T
    return symmetrize(M.A @ S + S @ M.A.T + M.Q - G @ M.eta @ G.T)


def rhs_backward(P, M):
    """Right-hand side of the backward (retrodiction) Riccati equation in reversed time."""
    P = _check_pair(P, M)
    G = P @ M.C.T + M.N.T
    return symmetrize(-M.A @ P - P @ M.A.T + M.Q - G @ M.eta @ G.T)


RHS = {FORWARD: rhs_forward, BACKWARD: rhs_backward}


def _direction(rhs):
    if rhs in (FORWARD, BACKWARD):
        return rhs
    if rhs is rhs_forward:
        return FORWARD
    if rhs is rhs_backward:
        return BACKWARD
    raise ValueError(f"rhs must be 'forward' or 'backward', got {rhs!r}")


@dataclass(frozen=True)
class MatrixStack:
    """System matrices stacked along a leading interval axis, ready for the kernels."""

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    N: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_matrices(cls, mats: Sequence[SystemMatrices]):
        if len(mats) == 0:
            raise ShapeError("need at least one set of system matrices")
        d, m = mats[0].dim, mats[0].n_outputs
        for M in mats:
            if M.dim != d or M.n_outputs != m:
                raise ShapeError("system matrices change dimension along the grid")
        return cls(
            A=np.ascontiguousarray([M.A for M in mats]),
            C=np.ascontiguousarray([M.C for M in mats]),
            Q=np.ascontiguousarray([M.Q for M in mats]),
            N=np.ascontiguousarray([M.N for M in mats]),
            eta=np.ascontiguousarray([M.eta for M in mats]),
        )

    def __len__(self):
        return self.A.shape[0]

    @property
    def dim(self):
        return self.A.shape[1]

    def slice(self, start, stop):
        return MatrixStack(*(a[start:stop] for a in (self.A, self.C, self.Q, self.N, self.eta)))

    def reversed(self):
        return MatrixStack(
            *(np.ascontiguousarray(a[::-1]) for a in (self.A, self.C, self.Q, self.N, self.eta))
        )

    def replace(self, k, M):
        """Copy with interval ``k`` swapped for ``M``."""
        out = MatrixStack(*(a.copy() for a in (self.A, self.C, self.Q, self.N, self.eta)))
        out.A[k], out.C[k], out.Q[k], out.N[k], out.eta[k] = M.A, M.C, M.Q, M.N, M.eta
        return out


def _raise_status(status, step, what="integration"):
    if status == _kernels.NONFINITE:
        raise IntegrationDivergedError(f"{what} produced non-finite values at step {step}", step)
    if status == _kernels.NOT_PSD:
        raise IntegrationDivergedError(
            f"{what} lost positive semidefiniteness at step {step}", step
        )


def sweep(direction, init, stack, stride, dt, store=False, tol_psd=TOL_PSD):
    """Run RK4 over every interval of ``stack`` in integration order.

    For ``direction == 'backward'`` the stack is consumed last interval
    first and ``init`` is the terminal covariance.  With ``store`` the
    returned array holds all ``len(stack) * stride + 1`` nodes in
    forward-time order; otherwise only the final covariance is returned.
    """
    sa, sn = _SIGNS[direction]
    S0 = np.ascontiguousarray(init, dtype=float)
    if direction == BACKWARD:
        stack = stack.reversed()
    n_nodes = len(stack) * stride + 1 if store else 0
    traj = np.empty((n_nodes, S0.shape[0], S0.shape[0]))
    S, status, step = _kernels.rk4_sweep(
        S0, stack.A, stack.C, stack.Q, stack.N, stack.eta, int(stride), float(dt), sa, sn,
        float(tol_psd), traj,
    )
    _raise_status(status, step)
    if not store:
        return S
    return traj[::-1].copy() if direction == BACKWARD else traj


def _as_stack(model, grid):
    if isinstance(model, SystemMatrices):
        return MatrixStack.from_matrices([model]), grid.steps
    if isinstance(model, MatrixStack):
        if len(model) != grid.steps:
            raise AlignmentError(f"stack has {len(model)} intervals, grid has {grid.steps}")
        return model, 1
    if callable(model):
        return MatrixStack.from_matrices([model(t) for t in grid.nodes[:-1]]), 1
    mats = list(model)
    if len(mats) != grid.steps:
        raise AlignmentError(f"{len(mats)} matrix sets given for {grid.steps} steps")
    return MatrixStack.from_matrices(mats), 1


def _check_init(S, d):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (d, d):
        raise ShapeError(f"initial covariance {S.shape} does not match dimension {d}")
    if not is_symmetric(S):
        raise ValidityError("initial covariance is not symmetric")
    S = symmetrize(S)
    if not is_psd(S):
        raise ValidityError("initial covariance is not positive semidefinite")
    return S


def integrate(
    rhs,
    init,
    model: SystemMatrices | Sequence[SystemMatrices] | Callable[[float], SystemMatrices] | MatrixStack,
    grid: TimeGrid,
    tol_psd=TOL_PSD,
):
    """Integrate a Riccati flow over ``grid`` with classic RK4.

    Parameters
    ----------
    rhs : {'forward', 'backward'} or the matching ``rhs_*`` function
        Which flow to integrate.
    init : array_like
        Covariance at ``grid.t0`` (forward) or at ``grid.t1`` (backward).
    model : SystemMatrices, sequence, callable or MatrixStack
        Constant matrices, one set per step, or a function of time sampled
        at the left endpoint of each step.
    grid : TimeGrid

    Returns
    -------
    CovarianceTrajectory
        Values at every node, in forward-time order.

    Raises
    ------
    IntegrationDivergedError
        On NaN/Inf or a PSD violation beyond round-off; ``.step`` counts
        steps in integration order.
    """
    direction = _direction(rhs)
    stack, stride = _as_stack(model, grid)
    S0 = _check_init(init, stack.dim)
    values = sweep(direction, S0, stack, stride, grid.dt, store=True, tol_psd=tol_psd)
    return CovarianceTrajectory(grid, values)


def natural_scales(M):
    """``(dt, time_scale, max_time)`` defaults derived from the drift spectrum.

    ``dt`` gives 200 steps per period of the fastest eigenfrequency, the
    residual is measured on the time scale ``1/|lambda|_max`` and the time
    budget is 20 relaxation times of the slowest decaying mode.
    """
    lam = np.linalg.eigvals(M.A)
    fast = float(np.max(np.abs(lam), initial=0.0))
    if fast <= 0.0:
        fast = 1.0
    decay = np.abs(lam.real)
    decay = decay[decay > 1e-12 * fast]
    slow = float(np.min(decay)) if decay.size else fast
    return 2.0 * np.pi / (200.0 * fast), 1.0 / fast, 20.0 / slow


def steady_state(rhs, M: SystemMatrices, S0=None, tol_ss=1e-10, max_time=None, dt=None,
                 time_scale=None, tol_psd=TOL_PSD):
    """Settle the autonomous Riccati flow for fixed matrices ``M``.

    Integration stops once ``|rhs(S)|_F * time_scale < tol_ss * (1 + |S|_F)``.
    ``time_scale`` makes the test independent of the time unit; it defaults
    to the inverse of the fastest drift eigenfrequency.

    Raises
    ------
    NoSteadyStateError
        If ``max_time`` elapses first.
    """
    direction = _direction(rhs)
    dt0, ts0, mt0 = natural_scales(M)
    dt = dt0 if dt is None else float(dt)
    time_scale = ts0 if time_scale is None else float(time_scale)
    max_time = mt0 if max_time is None else float(max_time)
    S0 = np.eye(M.dim) if S0 is None else _check_init(S0, M.dim)
    sa, sn = _SIGNS[direction]
    max_steps = int(math.ceil(max_time / dt))
    S, status, step = _kernels.settle(
        np.ascontiguousarray(S0), M.A, M.C, M.Q, M.N, M.eta, dt, sa, sn, float(tol_ss),
        time_scale, max_steps, float(tol_psd),
    )
    _raise_status(status, step, "steady-state search")
    if status == _kernels.NOT_SETTLED:
        raise NoSteadyStateError(
            f"{direction} Riccati flow did not settle within {max_time:g} s "
            f"(residual tolerance {tol_ss:g})"
        )
    return symmetrize(S)
