"""Monte Carlo validation of the impulse-estimation variance.

A ground-truth trajectory is drawn from the linear model, the kick is applied
at ``t_p`` and noisy measurement increments are recorded.  The conditional
mean is then filtered forward on ``[0, t_p)`` and retrodicted backward on
``[t_p, T]``; the difference of the two estimates at ``t_p`` is the impulse
estimate.  Across an ensemble its error variance should equal
``n^T (S(t_p) + P(t_p)) n``.

Paths use an exponential Euler-Maruyama step: the drift is propagated with
``exp(A h)`` and the noise increments are the usual Euler ones.  Plain
Euler-Maruyama amplifies an undamped oscillator by ``sqrt(1 + (W h)^2)`` per
step, which over ``10^4`` steps destroys the statistics.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import AlignmentError, FactorizationError, ImpulseShapingError, TrialError
from .gaussian import GaussianMoments
from .impulse import ImpulseProblem, projected_variance
from .ocp import ControlProtocol, CovarianceShaper, OcpConfig
from .riccati import BACKWARD, FORWARD, CovarianceTrajectory, TimeGrid, sweep
from .systems import ParametricModel

logger = logging.getLogger(__name__)

PSD_CLIP = 1e-12
MIN_TRIALS = 100


def psd_sqrt(Q, clip=PSD_CLIP):
    """Symmetric square root ``B`` with ``B B^T = Q``.

    Eigenvalues in ``[-clip * scale, 0)`` are set to zero; anything more
    negative raises :class:`FactorizationError`.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    scale = max(float(np.max(np.abs(w))), 1.0)
    if w.min() < -clip * scale:
        raise FactorizationError(f"noise covariance has eigenvalue {w.min():.3e} < 0")
    B = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (B + B.T)


@dataclass(frozen=True)
class MeasurementRecord:
    """Measurement increments on an integrator grid.

    ``states`` holds the simulated truth (pre-kick at the kick node) and is
    kept for diagnostics; estimators never read it.  ``terminal_mean`` is the
    retrodictive prior mean at ``T``; ``None`` means zero.
    """

    grid: TimeGrid
    dY: np.ndarray
    seed: int
    states: np.ndarray | None = field(default=None, repr=False, compare=False)
    terminal_mean: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dY = np.asarray(self.dY, dtype=float)
        if dY.ndim == 1:
            dY = dY[:, None]
        if dY.shape[0] != self.grid.steps:
            raise AlignmentError(f"{dY.shape[0]} increments for a grid of {self.grid.steps} steps")
        object.__setattr__(self, "dY", dY)

    def reversed(self):
        """The same increments in reverse step order on the same grid."""
        return MeasurementRecord(self.grid, self.dY[::-1].copy(), self.seed)


@dataclass(frozen=True)
class MeanTrajectory:
    grid: TimeGrid
    values: np.ndarray

    def at(self, t):
        return self.values[self.grid.index_of(t)]


@dataclass(frozen=True)
class TrialResult:
    alpha_hat: float
    delta_r_hat: np.ndarray
    r_fwd_tp: np.ndarray
    r_back_tp: np.ndarray


@dataclass(frozen=True)
class EnsembleStats:
    """Sample statistics of ``alpha_hat - alpha`` against the predicted variance."""

    trials: int
    mean_error: float
    var_error: float
    theoretical_var: float
    z_score: float
    alpha: float = 0.0
    alpha_hats: np.ndarray = field(default=None, repr=False, compare=False)
    seeds: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_estimates(cls, alpha_hats, alpha, theoretical_var, seeds=None):
        a = np.asarray(alpha_hats, dtype=float)
        err = a - alpha
        n = a.size
        mean = float(err.mean())
        var = float(np.sum((err - mean) ** 2) / (n - 1))
        return cls(
            trials=n,
            mean_error=mean,
            var_error=var,
            theoretical_var=float(theoretical_var),
            z_score=z_score(var, theoretical_var, n),
            alpha=float(alpha),
            alpha_hats=a,
            seeds=None if seeds is None else np.asarray(seeds),
        )

    @property
    def relative_error(self):
        return self.var_error / self.theoretical_var - 1.0


def z_score(var_error, theoretical_var, trials):
    """Deviation of a Gaussian sample variance in units of its standard error."""
    return (var_error - theoretical_var) / (theoretical_var * math.sqrt(2.0 / trials))


class SimulationPlan:
    """Everything shared by the trials of one (model, protocol, problem).

    Per-step propagators, noise factors, the covariance trajectories used as
    filter gains and the predicted impulse variance are built once.

    ``terminal`` selects the backward filter's prior mean at ``T``: ``"zero"``
    relies on the retrodiction forgetting it before ``t_p``; ``"matched"``
    draws it as ``x(T) + e`` with ``e ~ N(0, P(T))``, the mirror image of
    drawing ``x(0)`` around the forward filter's zero mean.  Use ``"matched"``
    when the protocol amplifies the state faster than the retrodiction
    forgets (parametric resonance).
    """

    def __init__(self, model: ParametricModel, protocol: ControlProtocol, problem: ImpulseProblem,
                 control_stride: int = OcpConfig.control_stride, terminal: str = "zero"):
        if terminal not in ("zero", "matched"):
            raise ValueError(f"unknown terminal mode {terminal!r}")
        self.terminal = terminal
        self.model = model
        self.protocol = protocol
        self.problem = problem
        self.stride = int(control_stride)
        self.shaper = CovarianceShaper(model, problem, protocol.grid,
                                       OcpConfig(control_stride=self.stride, gamma_reg=0.0))
        self.fine = protocol.grid.refine(self.stride)
        self.h = self.fine.dt
        self.kp = _node(self.fine, problem.t_p)
        p = np.asarray(protocol.p, dtype=float)
        mats = [self.shaper.matrices(v) for v in p]
        rep = lambda xs: np.ascontiguousarray(np.repeat(np.asarray(xs), self.stride, axis=0))
        self.A = rep([M.A for M in mats])
        self.Phi = rep([expm(M.A * self.h) for M in mats])
        self.Phi_inv = rep([expm(-M.A * self.h) for M in mats])
        self.C = rep([M.C for M in mats])
        self.N = rep([M.N for M in mats])
        self.B = rep([psd_sqrt(M.Q) for M in mats])
        self.sqrt_eta = rep([np.diag(np.sqrt(np.diag(M.eta))) for M in mats])
        a_norm = max(np.linalg.norm(M.A, 2) for M in mats)
        if a_norm * self.h >= 0.1:
            warnings.warn(f"||A|| dt = {a_norm * self.h:.3g} >= 0.1; refine the grid",
                          RuntimeWarning, stacklevel=3)
        self._traces = None

    @property
    def traces(self):
        if self._traces is None:
            self._traces = self.shaper.traces(self.protocol.p)
        return self._traces

    @property
    def sigma0(self):
        return self.shaper.steady(FORWARD, self.protocol.p[0])

    @property
    def pi_T(self):
        return self.shaper.steady(BACKWARD, self.protocol.p[-1])

    @property
    def theoretical_var(self):
        S, P = self.traces
        return projected_variance(S.values[self.kp] + P.values[self.kp], self.problem.n)

    def simulate(self, seed):
        rng = np.random.default_rng(int(seed))
        d = self.A.shape[1]
        m = self.C.shape[1]
        K = self.fine.steps
        x0 = psd_sqrt(self.sigma0) @ rng.standard_normal(d)
        dw = rng.standard_normal((K, d))
        dv = rng.standard_normal((K, m))
        xs, dY = _kernels.euler_maruyama_record(
            x0, self.Phi, self.C, self.B, self.sqrt_eta, self.h, self.kp,
            np.asarray(self.problem.kick, dtype=float), dw, dv,
        )
        rT = None
        if self.terminal == "matched":
            rT = xs[-1] + psd_sqrt(self.pi_T) @ rng.standard_normal(d)
        return MeasurementRecord(self.fine, dY, int(seed), xs, rT)

    def check(self, record):
        if not record.grid.same_as(self.fine):
            raise AlignmentError("record grid does not match the protocol's integrator grid")

    def forward_means(self, record, r0, gain_cov, stop):
        self.check(record)
        return _kernels.kalman_mean_forward(
            np.asarray(r0, dtype=float), self.Phi[:stop], self.C[:stop], self.sqrt_eta[:stop],
            np.ascontiguousarray(gain_cov[:stop]), self.N[:stop], self.h,
            np.ascontiguousarray(record.dY[:stop]),
        )

    def backward_means(self, record, rT, gain_cov, start):
        self.check(record)
        return _kernels.kalman_mean_backward(
            np.asarray(rT, dtype=float), self.Phi_inv[start:], self.C[start:],
            self.sqrt_eta[start:], np.ascontiguousarray(gain_cov[start + 1:]), self.N[start:],
            self.h, np.ascontiguousarray(record.dY[start:]),
        )

    def estimate(self, record):
        S, P = self.traces
        d = self.A.shape[1]
        kp = self.kp
        r_f = self.forward_means(record, np.zeros(d), S.values, kp)[-1]
        rT = np.zeros(d) if record.terminal_mean is None else record.terminal_mean
        r_b = self.backward_means(record, rT, P.values, kp)[0]
        delta = r_b - r_f
        return TrialResult(float(self.problem.n @ delta), delta, r_f, r_b)

    def trial(self, seed):
        return self.estimate(self.simulate(seed))


def _node(grid, t):
    k = grid.index_of(t)
    if abs(grid.nodes[k] - t) > 1e-9 * grid.dt:
        raise AlignmentError(f"t = {t} is not a node of the integrator grid")
    return k


def _stride_of(record, protocol):
    steps, K = record.grid.steps, protocol.grid.steps
    if steps % K or not record.grid.same_as(protocol.grid.refine(steps // K)):
        raise AlignmentError("record grid is not a refinement of the protocol grid")
    return steps // K


def simulate_record(model, protocol, problem, seed, control_stride=OcpConfig.control_stride,
                    terminal="zero"):
    """Draw one measurement record with the kick ``problem.kick`` applied at ``t_p``.

    The initial state is drawn from the steady-state filter covariance at
    ``p_0``, matching a forward filter that starts at zero mean.
    """
    return SimulationPlan(model, protocol, problem, control_stride, terminal).simulate(seed)


def filter_forward(record, model, protocol, init: GaussianMoments, t_end=None):
    """Conditional mean from ``init`` over ``[t0, t_end]`` using increments before ``t_end``."""
    stride = _stride_of(record, protocol)
    plan = _plain_plan(model, protocol, stride, record.grid)
    stop = record.grid.steps if t_end is None else _node(record.grid, t_end)
    S = sweep(FORWARD, init.cov, plan.shaper.stack(protocol.p), stride, plan.h, store=True)
    values = plan.forward_means(record, init.mean, S, stop)
    return MeanTrajectory(TimeGrid(record.grid.t0, record.grid.nodes[stop], stop), values)


def filter_backward(record, model, protocol, terminal: GaussianMoments, t_start=None):
    """Retrodicted mean from ``terminal`` at ``T`` back to ``t_start`` using increments after it."""
    stride = _stride_of(record, protocol)
    plan = _plain_plan(model, protocol, stride, record.grid)
    start = 0 if t_start is None else _node(record.grid, t_start)
    P = sweep(BACKWARD, terminal.cov, plan.shaper.stack(protocol.p), stride, plan.h, store=True)
    values = plan.backward_means(record, terminal.mean, P, start)
    K = record.grid.steps
    return MeanTrajectory(TimeGrid(record.grid.nodes[start], record.grid.t1, K - start), values)


def _plain_plan(model, protocol, stride, fine):
    # filters need no kick; any interior control node serves as t_p
    g = protocol.grid
    problem = ImpulseProblem(t_p=g.nodes[max(g.steps // 2, 1)], T=fine.t1)
    return SimulationPlan(model, protocol, problem, stride)


def estimate_impulse(record, model, protocol, problem, control_stride=None):
    """Filter ``[0, t_p)`` forward and ``[t_p, T]`` backward; return the mean jump at ``t_p``."""
    stride = _stride_of(record, protocol) if control_stride is None else control_stride
    return SimulationPlan(model, protocol, problem, stride).estimate(record)


def run_ensemble(model, protocol, problem, trials, base_seed, control_stride=OcpConfig.control_stride,
                 workers=1, terminal="zero", plan=None):
    """Simulate ``trials`` records seeded ``base_seed + k`` and compare the error variance
    with ``n^T (S(t_p) + P(t_p)) n``.

    Parameters
    ----------
    workers : int
        Thread count; the kernels release the GIL.  Results do not depend
        on it.
    """
    trials = int(trials)
    if trials < 2:
        raise ValueError("need at least two trials")
    if trials < MIN_TRIALS:
        warnings.warn(f"{trials} trials is below the statistical floor of {MIN_TRIALS}",
                      RuntimeWarning, stacklevel=2)
    plan = plan or SimulationPlan(model, protocol, problem, control_stride, terminal)
    plan.traces  # build once before any worker starts
    if not 0 <= int(base_seed) <= 2**64 - trials:
        raise ValueError("seeds base_seed + k must fit in an unsigned 64-bit integer")
    seeds = np.array([int(base_seed) + k for k in range(trials)], dtype=np.uint64)

    def one(k):
        try:
            res = plan.trial(int(seeds[k]))
        except ImpulseShapingError as exc:
            raise TrialError(f"trial {k} failed: {exc}", k) from exc
        if not math.isfinite(res.alpha_hat):
            raise TrialError(f"trial {k} produced a non-finite estimate", k)
        return res.alpha_hat

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            alpha_hats = list(pool.map(one, range(trials)))
    else:
        alpha_hats = [one(k) for k in range(trials)]
    return EnsembleStats.from_estimates(alpha_hats, plan.problem.alpha, plan.theoretical_var, seeds)
