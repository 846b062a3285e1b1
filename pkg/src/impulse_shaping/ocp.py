"""Covariance shaping by piecewise-constant parametric modulation.

The decision variable is a vector of control values ``p_k``, each held for
``control_stride`` RK4 steps.  The objective is

    n^T (S(t_p) + P(t_p)) n + gamma_reg * sum_k |p_k| dt_k

where ``S`` is integrated forward on ``[0, t_p]`` from the steady state at
``p_0`` and ``P`` backward on ``[t_p, T]`` from the steady state at the last
control value.  Because the two legs see disjoint controls, the
finite-difference gradient only re-integrates the leg a control belongs to,
starting from the cached nominal covariance at that control interval.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AdmissibilityError,
    GradientUnavailableError,
    InfeasibleProtocolError,
    IntegrationDivergedError,
    NoSteadyStateError,
    RangeError,
)
from . import _kernels
from .impulse import ImpulseProblem, projected_variance
from .riccati import BACKWARD, FORWARD, CovarianceTrajectory, MatrixStack, TimeGrid, steady_state, sweep
from .systems import DEFAULT_BOUNDS, ParametricModel

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class ControlProtocol:
    """Piecewise-constant modulation ``p[k]`` on the intervals of ``grid``."""

    grid: TimeGrid
    p: np.ndarray
    bounds: tuple[float, float] = DEFAULT_BOUNDS

    def __post_init__(self):
        p = np.array(self.p, dtype=float, copy=True).ravel()
        if p.size != self.grid.steps:
            raise ValueError(f"{p.size} control values for {self.grid.steps} intervals")
        lo, hi = (float(b) for b in self.bounds)
        if np.any(p < lo) or np.any(p > hi):
            raise AdmissibilityError(f"control values leave the admissible box [{lo}, {hi}]")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "bounds", (lo, hi))

    @classmethod
    def zeros(cls, grid, bounds=DEFAULT_BOUNDS):
        return cls(grid, np.zeros(grid.steps), bounds)

    def with_values(self, p):
        return ControlProtocol(self.grid, p, self.bounds)

    @property
    def times(self):
        """Left endpoint of each control interval."""
        return self.grid.nodes[:-1]

    def per_step(self, stride):
        """Control value for every integrator step."""
        return np.repeat(self.p, stride)


@dataclass(frozen=True)
class OcpConfig:
    """Solver settings.

    ``gamma_reg=None`` selects the weight for which a full-depth protocol
    over the whole horizon costs 5 % of the zero-protocol variance.
    ``grad_tol`` applies to the projected gradient of the cost divided by
    its initial value.  ``gradient_method`` is ``"adjoint"`` (reverse-mode
    through the integrator) or ``"fd"`` (central finite differences).
    """

    gamma_reg: float | None = None
    max_iters: int = 200
    grad_tol: float = 1e-6
    fd_step: float = 1e-5
    control_stride: int = 10
    tol_ss: float = 1e-10
    gradient_method: str = "adjoint"

    def __post_init__(self):
        if self.gradient_method not in ("adjoint", "fd"):
            raise ValueError(f"unknown gradient_method {self.gradient_method!r}")
        if self.gamma_reg is not None and self.gamma_reg < 0:
            raise ValueError("gamma_reg must be non-negative")
        if self.max_iters < 1 or self.control_stride < 1:
            raise ValueError("max_iters and control_stride must be positive")
        if not self.fd_step > 0 or not self.grad_tol > 0:
            raise ValueError("fd_step and grad_tol must be positive")


@dataclass(frozen=True)
class OcpResult:
    protocol: ControlProtocol
    cost_history: tuple[float, ...]
    final_cost: float
    final_projected_variance: float
    steady_state_projected_variance: float
    ratio: float
    gamma_reg: float
    iterations: int
    stalled: bool = False
    converged: bool = False

    @property
    def sqrt_ratio(self):
        return math.sqrt(self.ratio)


def horizon(model, periods_before=25, periods_after=25, steps_per_period=200, control_stride=10,
            n=(0.0, 1.0), alpha=0.0):
    """Build the impulse problem and control grid for a model.

    ``t_p`` sits ``periods_before`` mechanical periods after the start and
    the record ends ``periods_after`` periods later.

    Returns
    -------
    problem : ImpulseProblem
    grid : TimeGrid
        Control grid with ``steps_per_period / control_stride`` intervals per period.
    """
    if steps_per_period % control_stride:
        raise ValueError("steps_per_period must be a multiple of control_stride")
    period = model.reference_period
    t_p = periods_before * period
    T = t_p + periods_after * period
    per = steps_per_period // control_stride
    grid = TimeGrid(0.0, T, (periods_before + periods_after) * per)
    return ImpulseProblem(t_p=t_p, T=T, n=n, alpha=alpha), grid


class CovarianceShaper:
    """Evaluates the objective and its gradient for one (model, problem, grid, config).

    Steady states and model evaluations are memoised per control value, so
    repeated calls with nearby protocols stay cheap.
    """

    def __init__(self, model: ParametricModel, problem: ImpulseProblem, grid: TimeGrid,
                 cfg: OcpConfig = OcpConfig()):
        self.model = model
        self.problem = problem
        self.grid = grid
        self.cfg = cfg
        self.stride = cfg.control_stride
        self.dt = grid.dt / self.stride
        self.kp = grid.index_of(problem.t_p)
        if not 0 < self.kp < grid.steps:
            raise RangeError("impulse time must fall strictly inside the control grid")
        self.n = problem.n
        self._mats = {}
        self._ss = {}
        self._baseline = None

    # -- building blocks ---------------------------------------------------------------------
    def matrices(self, p):
        key = float(p)
        M = self._mats.get(key)
        if M is None:
            M = self._mats[key] = self.model(key)
        return M

    def stack(self, p):
        return MatrixStack.from_matrices([self.matrices(v) for v in p])

    def steady(self, direction, p):
        key = (direction, float(p))
        S = self._ss.get(key)
        if S is None:
            M = self.matrices(p)
            S = steady_state(direction, M, S0=np.eye(M.dim), tol_ss=self.cfg.tol_ss, dt=self.dt,
                             time_scale=1.0 / self.model.omega0)
            self._ss[key] = S
        return S

    def regularizer(self, p):
        return self.gamma_reg * float(np.sum(np.abs(p))) * self.grid.dt

    @property
    def baseline(self):
        """Zero-protocol projected variance ``n^T (S_ss + P_ss) n`` at ``p = 0``."""
        if self._baseline is None:
            self._baseline = projected_variance(
                self.steady(FORWARD, 0.0) + self.steady(BACKWARD, 0.0), self.n
            )
        return self._baseline

    @property
    def gamma_reg(self):
        if self.cfg.gamma_reg is not None:
            return float(self.cfg.gamma_reg)
        p_max = max(abs(b) for b in self.model.bounds)
        return 0.05 * self.baseline / (p_max * self.problem.T)

    # -- legs --------------------------------------------------------------------------------
    def forward_leg(self, p, stack=None, store=False):
        stack = self.stack(p[: self.kp]) if stack is None else stack
        return sweep(FORWARD, self.steady(FORWARD, p[0]), stack, self.stride, self.dt, store=store)

    def backward_leg(self, p, stack=None, store=False):
        stack = self.stack(p[self.kp:]) if stack is None else stack
        return sweep(BACKWARD, self.steady(BACKWARD, p[-1]), stack, self.stride, self.dt, store=store)

    def _terms(self, p):
        try:
            S = self.forward_leg(p)
            P = self.backward_leg(p)
        except (IntegrationDivergedError, NoSteadyStateError) as exc:
            raise InfeasibleProtocolError(str(exc)) from exc
        return S, P

    def evaluate(self, p):
        """Return ``(cost, projected_variance)``."""
        p = np.asarray(p, dtype=float)
        S, P = self._terms(p)
        var = projected_variance(S + P, self.n)
        return var + self.regularizer(p), var

    def cost_or_inf(self, p):
        try:
            return self.evaluate(p)[0]
        except (InfeasibleProtocolError, AdmissibilityError):
            return math.inf

    # -- gradient ----------------------------------------------------------------------------
    def gradient(self, p, dense=False):
        """Central finite differences of the cost, one control at a time.

        Probes are clipped to the admissible box; a probe that cannot be
        evaluated falls back to a one-sided difference.  With ``dense`` every
        probe re-integrates both legs from scratch (reference path).
        """
        p = np.asarray(p, dtype=float)
        lo, hi = self.model.bounds
        h = self.cfg.fd_step
        K, kp, s = p.size, self.kp, self.stride
        if dense:
            def probe(k, v):
                q = p.copy()
                q[k] = v
                return self.cost_or_inf(q)
        else:
            try:
                S_nom = self.forward_leg(p, store=True)[::s]
                P_nom = self.backward_leg(p, store=True)[::s]
            except (IntegrationDivergedError, NoSteadyStateError) as exc:
                raise GradientUnavailableError(f"nominal protocol is infeasible: {exc}") from exc
            fwd_stack = self.stack(p[:kp])
            back_stack = self.stack(p[kp:])
            S_tp, P_tp = S_nom[kp], P_nom[-1]
            # P_nom is in forward-time order over nodes kp..K
            reg_nom = self.regularizer(p)

            def probe(k, v):
                M = self.model(v)
                reg = reg_nom + self.gamma_reg * (abs(v) - abs(p[k])) * self.grid.dt
                try:
                    if k < kp:
                        sub = fwd_stack.slice(k, kp).replace(0, M)
                        start = self.steady(FORWARD, v) if k == 0 else S_nom[k]
                        S = sweep(FORWARD, start, sub, s, self.dt)
                        return projected_variance(S + P_tp, self.n) + reg
                    j = k - kp
                    sub = back_stack.slice(0, j + 1).replace(j, M)
                    start = self.steady(BACKWARD, v) if k == K - 1 else P_nom[j + 1]
                    P = sweep(BACKWARD, start, sub, s, self.dt)
                    return projected_variance(S_tp + P, self.n) + reg
                except (IntegrationDivergedError, NoSteadyStateError, AdmissibilityError):
                    return math.inf

        g = np.empty(K)
        for k in range(K):
            up, dn = min(p[k] + h, hi), max(p[k] - h, lo)
            f_up, f_dn = probe(k, up), probe(k, dn)
            if math.isinf(f_up) and math.isinf(f_dn):
                raise GradientUnavailableError(f"both probes of control {k} are infeasible")
            if math.isinf(f_up) or math.isinf(f_dn):
                f0 = self.cost_or_inf(p)
                if math.isinf(f_up):
                    up, f_up = p[k], f0
                else:
                    dn, f_dn = p[k], f0
            g[k] = (f_up - f_dn) / (up - dn)
        return g

    # -- adjoint gradient --------------------------------------------------------------------
    def matrix_derivative(self, p, delta=1e-6):
        """Central difference of the model matrices in ``p`` (one-sided at an inadmissible side)."""
        key = ("d", float(p))
        D = self._mats.get(key)
        if D is not None:
            return D
        try:
            up = self.model(p + delta)
            hu = delta
        except AdmissibilityError:
            up, hu = self.matrices(p), 0.0
        try:
            dn = self.model(p - delta)
            hd = delta
        except AdmissibilityError:
            dn, hd = self.matrices(p), 0.0
        if hu + hd == 0.0:
            raise GradientUnavailableError(f"model cannot be probed around p = {p}")
        D = tuple((getattr(up, f) - getattr(dn, f)) / (hu + hd) for f in ("A", "C", "Q", "N", "eta"))
        self._mats[key] = D
        return D

    def _derivative_stack(self, p):
        parts = [self.matrix_derivative(v) for v in p]
        return tuple(np.ascontiguousarray([d[i] for d in parts]) for i in range(5))

    def _steady_sensitivity(self, direction, p, lam0):
        """``<lam0, d S_ss / dp>`` from the linearised fixed-point condition."""
        M = self.matrices(p)
        S = self.steady(direction, p)
        dA, dC, dQ, dN, deta = self.matrix_derivative(p)
        sa, sn = (1.0, -1.0) if direction == FORWARD else (-1.0, 1.0)
        G = S @ M.C.T + sn * M.N.T
        dG = S @ dC.T + sn * dN.T
        F_p = sa * (dA @ S + S @ dA.T) + dQ - dG @ M.eta @ G.T - G @ M.eta @ dG.T - G @ deta @ G.T
        At = sa * M.A - G @ M.eta @ M.C
        d = M.dim
        eye = np.eye(d)
        L = np.kron(eye, At) + np.kron(At, eye)
        dS = np.linalg.solve(L, -F_p.reshape(-1, order="F")).reshape(d, d, order="F")
        return float(np.sum(lam0 * dS))

    def adjoint_gradient(self, p):
        """Exact derivative of the discretised cost with respect to every control.

        Reverse-mode differentiation of the RK4 recursions; the steady-state
        boundary values are differentiated through their fixed-point equation.
        """
        p = np.asarray(p, dtype=float)
        kp, s = self.kp, self.stride
        lam = np.outer(self.n, self.n)
        g = np.zeros(p.size)
        for direction, part in ((FORWARD, p[:kp]), (BACKWARD, p[kp:])):
            stack = self.stack(part)
            dstack = self._derivative_stack(part)
            boundary = part[0] if direction == FORWARD else part[-1]
            sa, sn = (1.0, -1.0) if direction == FORWARD else (-1.0, 1.0)
            try:
                traj = sweep(direction, self.steady(direction, boundary), stack, s, self.dt, store=True)
            except (IntegrationDivergedError, NoSteadyStateError) as exc:
                raise GradientUnavailableError(f"nominal protocol is infeasible: {exc}") from exc
            if direction == BACKWARD:
                traj = traj[::-1]
                stack = stack.reversed()
                dstack = tuple(np.ascontiguousarray(a[::-1]) for a in dstack)
            lam0, gk = _kernels.rk4_adjoint(
                np.ascontiguousarray(traj), stack.A, stack.C, stack.Q, stack.N, stack.eta,
                *dstack, s, self.dt, sa, sn, lam,
            )
            if direction == BACKWARD:
                gk = gk[::-1]
                gk[-1] += self._steady_sensitivity(direction, boundary, lam0)
                g[kp:] = gk
            else:
                gk[0] += self._steady_sensitivity(direction, boundary, lam0)
                g[:kp] = gk
        g += self.gamma_reg * self.grid.dt * np.sign(p)
        return g

    # -- traces ------------------------------------------------------------------------------
    def traces(self, p):
        """Forward and backward covariances at every integrator node of the full horizon."""
        p = np.asarray(p, dtype=float)
        stack = self.stack(p)
        fine = self.grid.refine(self.stride)
        S = sweep(FORWARD, self.steady(FORWARD, p[0]), stack, self.stride, self.dt, store=True)
        P = sweep(BACKWARD, self.steady(BACKWARD, p[-1]), stack, self.stride, self.dt, store=True)
        return CovarianceTrajectory(fine, S), CovarianceTrajectory(fine, P)


def _shaper(model, problem, cfg, grid):
    return CovarianceShaper(model, problem, grid, cfg)


def evaluate_cost(protocol: ControlProtocol, model: ParametricModel, problem: ImpulseProblem,
                  cfg: OcpConfig = OcpConfig()):
    """Objective value and projected variance ``n^T (S + P) n`` at ``t_p``.

    Raises
    ------
    InfeasibleProtocolError
        If either Riccati leg diverges under the protocol.
    """
    return _shaper(model, problem, cfg, protocol.grid).evaluate(protocol.p)


def gradient(protocol, model, problem, cfg=OcpConfig()):
    """Finite-difference gradient of :func:`evaluate_cost` with respect to every control."""
    return _shaper(model, problem, cfg, protocol.grid).gradient(protocol.p)


def _project(x, lo, hi):
    return np.clip(x, lo, hi)


def optimize(model: ParametricModel, problem: ImpulseProblem, cfg: OcpConfig,
             init: ControlProtocol, callback=None, shaper: CovarianceShaper | None = None):
    """Projected gradient descent with Armijo backtracking on the control box.

    The first trial step of each iteration is the Barzilai-Borwein length
    from the previous pair of iterates; it is halved until the Armijo
    condition ``f(x+) <= f(x) + c1 g^T (x+ - x)`` holds.  Iterates are
    monotone, so the last accepted protocol is also the best one found.
    """
    sh = shaper or _shaper(model, problem, cfg, init.grid)
    lo, hi = init.bounds
    lo, hi = max(lo, model.bounds[0]), min(hi, model.bounds[1])
    x = _project(np.asarray(init.p, dtype=float), lo, hi)
    f = sh.cost_or_inf(x)
    if math.isinf(f):
        raise InfeasibleProtocolError("initial protocol is infeasible")
    scale = max(abs(f), 1e-300)
    history = [f]
    raw = sh.adjoint_gradient if cfg.gradient_method == "adjoint" else sh.gradient
    kink = sh.gamma_reg * sh.grid.dt
    grad = lambda v: _steepest_subgradient(raw(v), v, kink)
    g = grad(x)
    width = hi - lo
    # first step moves the largest gradient component by a tenth of the box
    step = 0.1 * width / max(np.max(np.abs(g)), 1e-300)
    stalled = converged = False
    for it in range(1, cfg.max_iters + 1):
        pg = x - _project(x - g / scale, lo, hi)
        if np.linalg.norm(pg) < cfg.grad_tol:
            converged = True
            break
        accepted = False
        t = step
        for _ in range(MAX_BACKTRACKS):
            x_new = _project(x - t * g, lo, hi)
            dx = x_new - x
            if not np.any(dx):
                break
            f_new = sh.cost_or_inf(x_new)
            if f_new <= f + ARMIJO_C1 * float(g @ dx):
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            stalled = len(history) == 1
            converged = not stalled
            break
        g_new = grad(x_new)
        s_vec, y_vec = x_new - x, g_new - g
        sy = float(s_vec @ y_vec)
        step = float(s_vec @ s_vec) / sy if sy > 0 else 10.0 * t
        step = min(max(step, 1e-12 * t), 1e6 * t)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        logger.debug("iteration %d: cost %.12g", it, f)
        if callback is not None:
            callback(it, x, f)
    cost, var = sh.evaluate(x)
    base = sh.baseline
    return OcpResult(
        protocol=ControlProtocol(init.grid, x, (lo, hi)),
        cost_history=tuple(history),
        final_cost=cost,
        final_projected_variance=var,
        steady_state_projected_variance=base,
        ratio=var / base,
        gamma_reg=sh.gamma_reg,
        iterations=len(history) - 1,
        stalled=stalled,
        converged=converged,
    )


def _steepest_subgradient(g, x, kink):
    """Minimal-norm subgradient of ``cost + kink * sum|x|``.

    ``g`` carries ``kink * sign(x)``, which is zero where ``x == 0``; there
    the subdifferential is ``g + [-kink, kink]`` and its smallest element is
    the soft threshold of ``g``.
    """
    if kink <= 0:
        return g
    g = g.copy()
    zero = x == 0
    g[zero] = np.sign(g[zero]) * np.maximum(np.abs(g[zero]) - kink, 0.0)
    return g


def _switch_times(t_a, t_b, frequency, depth, phase, omega_of, omega_ref):
    """Times at which the square wave flips sign, with the sign on each segment.

    A half-cycle ends when the accumulated oscillator phase ``int omega(p) dt``
    reaches ``omega_ref * pi / frequency``; for ``omega_of == omega_ref`` this
    is an ordinary square wave ``sign(sin(frequency (t - t_a) + phase))``.
    """
    target = omega_ref * math.pi / frequency
    ph = phase % (2.0 * math.pi)
    sign = 1.0 if ph < math.pi else -1.0
    done = (ph % math.pi) / math.pi * target
    t = t_a
    edges, signs = [t_a], []
    while t < t_b:
        w = omega_of(sign * depth)
        t_next = t + (target - done) / w
        signs.append(sign)
        t = min(t_next, t_b)
        edges.append(t)
        sign, done = -sign, 0.0
    return np.array(edges), np.array(signs)


def rectangular_protocol(grid: TimeGrid, frequency, depth, phase=0.0, window=None,
                         bounds=DEFAULT_BOUNDS, model: ParametricModel | None = None):
    """Square-wave modulation of amplitude ``depth`` inside ``window``, zero outside.

    With ``model`` given, the switching times follow the model's
    instantaneous oscillation frequency so that every half-cycle spans the
    same oscillator phase, which matters when ``p`` rescales the frequency
    nonlinearly.  Each control interval takes the sign at its midpoint.
    """
    lo, hi = bounds
    if depth < 0 or depth > min(-lo, hi):
        raise AdmissibilityError(f"depth {depth} does not fit the bounds {bounds}")
    t_a, t_b = (grid.t0, grid.t1) if window is None else (float(window[0]), float(window[1]))
    eps = 1e-9 * grid.dt
    if t_a < grid.t0 - eps or t_b > grid.t1 + eps or not t_b > t_a:
        raise RangeError(f"window [{t_a}, {t_b}] is not inside [{grid.t0}, {grid.t1}]")
    p = np.zeros(grid.steps)
    if depth == 0:
        return ControlProtocol(grid, p, bounds)
    if model is None:
        def omega_of(_):
            return frequency / 2.0
        omega_ref = frequency / 2.0
    else:
        omega_of = model.instantaneous_frequency
        omega_ref = model.instantaneous_frequency(0.0)
    edges, signs = _switch_times(t_a, t_b, frequency, depth, phase, omega_of, omega_ref)
    mid = grid.nodes[:-1] + 0.5 * grid.dt
    inside = (mid >= t_a) & (mid < t_b)
    seg = np.clip(np.searchsorted(edges, mid[inside], side="right") - 1, 0, signs.size - 1)
    p[inside] = depth * signs[seg]
    return ControlProtocol(grid, p, bounds)
