import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_model
from impulse_shaping import ocp
from impulse_shaping.errors import (
    AdmissibilityError,
    InfeasibleProtocolError,
    RangeError,
)
from impulse_shaping.gaussian import SystemMatrices
from impulse_shaping.impulse import ImpulseProblem
from impulse_shaping.riccati import BACKWARD, FORWARD, TimeGrid
from impulse_shaping.systems import ParametricModel

TOY_PROBLEM = ImpulseProblem(t_p=1.0, T=2.0, n=(1.0,))
TOY_GRID = TimeGrid(0.0, 2.0, 2)


@pytest.fixture(scope="module")
def short_nems(nems):
    problem, grid = ocp.horizon(nems, periods_before=4, periods_after=4)
    return nems, problem, grid


@pytest.fixture(scope="module")
def short_shaper(short_nems):
    model, problem, grid = short_nems
    return ocp.CovarianceShaper(model, problem, grid, ocp.OcpConfig(gamma_reg=0.0))


def random_protocol(grid, seed, scale=0.3):
    return np.random.default_rng(seed).uniform(-scale, scale, grid.steps)


# -- protocol and horizon ---------------------------------------------------------------------------

def test_horizon_defaults(nems):
    problem, grid = ocp.horizon(nems)
    assert grid.steps == 1000
    assert problem.t_p == pytest.approx(25 * nems.reference_period)
    assert problem.T == pytest.approx(2 * problem.t_p)
    assert grid.index_of(problem.t_p) == 500


def test_protocol_validation():
    with pytest.raises(AdmissibilityError):
        ocp.ControlProtocol(TOY_GRID, [0.0, 0.5])
    with pytest.raises(ValueError):
        ocp.ControlProtocol(TOY_GRID, [0.0])
    pr = ocp.ControlProtocol.zeros(TOY_GRID)
    assert np.array_equal(pr.per_step(3), np.zeros(6))
    assert np.array_equal(pr.with_values([0.1, 0.2]).p, [0.1, 0.2])


def test_config_validation():
    for kw in ({"gamma_reg": -1.0}, {"max_iters": 0}, {"fd_step": 0.0}, {"control_stride": 0},
               {"gradient_method": "newton"}):
        with pytest.raises(ValueError):
            ocp.OcpConfig(**kw)


# -- cost -------------------------------------------------------------------------------------------

def test_zero_protocol_cost_is_steady_state(short_nems, short_shaper):
    model, problem, grid = short_nems
    z = ocp.ControlProtocol.zeros(grid)
    cost, var = ocp.evaluate_cost(z, model, problem, ocp.OcpConfig(gamma_reg=0.0))
    assert cost == var
    assert var == pytest.approx(short_shaper.baseline, rel=1e-9)
    cost_reg, var_reg = ocp.evaluate_cost(z, model, problem, ocp.OcpConfig(gamma_reg=1e6))
    assert (cost_reg, var_reg) == (cost, var)


def test_default_regularizer_weight(short_nems):
    model, problem, grid = short_nems
    sh = ocp.CovarianceShaper(model, problem, grid)
    full = np.full(grid.steps, 0.4)
    assert sh.regularizer(full) == pytest.approx(0.05 * sh.baseline, rel=1e-12)


def test_infeasible_protocol():
    def evaluate(p):
        # no measurement and an unstable drift for p > 0: no steady state exists
        return SystemMatrices(A=[[-1.0 + 10.0 * p]], C=[[0.0]], Q=[[1.0]])

    model = ParametricModel(evaluate=evaluate, bounds=(-0.4, 0.4), omega0=1.0)
    pr = ocp.ControlProtocol(TOY_GRID, [0.4, 0.0])
    with pytest.raises(InfeasibleProtocolError):
        ocp.evaluate_cost(pr, model, TOY_PROBLEM, ocp.OcpConfig(control_stride=10))
    sh = ocp.CovarianceShaper(model, TOY_PROBLEM, TOY_GRID, ocp.OcpConfig(control_stride=10))
    assert sh.cost_or_inf(pr.p) == math.inf


def toy_scan(cfg, points=10_001):
    """Exhaustive scan over constant protocols of the scalar toy."""
    model = toy_model()
    sh = ocp.CovarianceShaper(model, TOY_PROBLEM, TOY_GRID, cfg)
    grid = np.linspace(-0.4, 0.4, points)
    costs = np.array([sh.evaluate([v, v])[0] for v in grid])
    return grid, costs, sh


def test_toy_scan_min_matches_evaluate():
    cfg = ocp.OcpConfig(gamma_reg=0.0, control_stride=10)
    grid, costs, sh = toy_scan(cfg, 2001)
    k = int(np.argmin(costs))
    assert grid[k] == pytest.approx(0.25, abs=1e-3)
    pr = ocp.ControlProtocol(TOY_GRID, [grid[k], grid[k]])
    assert ocp.evaluate_cost(pr, toy_model(), TOY_PROBLEM, cfg)[0] == costs[k]


def test_toy_gradient_sign_matches_scan_slope():
    cfg = ocp.OcpConfig(gamma_reg=0.0, control_stride=10)
    grid, costs, sh = toy_scan(cfg, 2001)
    mid = len(grid) // 2
    slope = (costs[mid + 1] - costs[mid - 1]) / (grid[mid + 1] - grid[mid - 1])
    g = ocp.gradient(ocp.ControlProtocol.zeros(TOY_GRID), toy_model(), TOY_PROBLEM, cfg)
    assert np.all(np.sign(g) == np.sign(slope))
    assert g.sum() == pytest.approx(slope, rel=1e-6)


# -- gradients --------------------------------------------------------------------------------------

def test_sparse_gradient_equals_dense(short_shaper):
    p = random_protocol(short_shaper.grid, 1)
    g = short_shaper.gradient(p)
    gd = short_shaper.gradient(p, dense=True)
    assert np.max(np.abs(g - gd)) <= 1e-10 * np.max(np.abs(gd))


@pytest.mark.parametrize("seed", [2, 3])
def test_adjoint_matches_finite_differences(short_shaper, seed):
    p = random_protocol(short_shaper.grid, seed)
    ga = short_shaper.adjoint_gradient(p)
    gf = short_shaper.gradient(p)
    assert np.max(np.abs(ga - gf)) <= 1e-6 * np.max(np.abs(gf))


def test_adjoint_matches_fd_with_regularizer_and_bounds(short_nems):
    model, problem, grid = short_nems
    sh = ocp.CovarianceShaper(model, problem, grid, ocp.OcpConfig())
    p = random_protocol(grid, 4, 0.5).clip(-0.4, 0.4)  # several controls sit on the bounds
    inner = np.abs(p) < 0.4 - 2e-5  # the FD probe is one-sided at a bound
    ga, gf = sh.adjoint_gradient(p), sh.gradient(p)
    assert np.max(np.abs(ga - gf)[inner]) <= 1e-6 * np.max(np.abs(gf))


def test_particle_adjoint(particle):
    problem, grid = ocp.horizon(particle, periods_before=3, periods_after=3)
    sh = ocp.CovarianceShaper(particle, problem, grid, ocp.OcpConfig(gamma_reg=0.0))
    p = random_protocol(grid, 5)
    ga, gf = sh.adjoint_gradient(p), sh.gradient(p)
    assert np.max(np.abs(ga - gf)) <= 1e-6 * np.max(np.abs(gf))


def test_gradient_forgets_distant_controls(nems):
    problem, grid = ocp.horizon(nems, periods_before=25, periods_after=25)
    sh = ocp.CovarianceShaper(nems, problem, grid, ocp.OcpConfig(gamma_reg=0.0))
    g = sh.adjoint_gradient(np.zeros(grid.steps))
    scale = np.max(np.abs(g))
    assert np.max(np.abs(g[:20])) < 1e-6 * scale
    assert np.max(np.abs(g[-20:])) < 1e-6 * scale


# -- separability -----------------------------------------------------------------------------------

@settings(max_examples=15)
@given(st.integers(0, 79), st.floats(-0.4, 0.4))
def test_separability(short_shaper, k, v):
    sh = short_shaper
    p = random_protocol(sh.grid, 6)
    q = p.copy()
    q[k] = v
    if k >= sh.kp:
        assert np.array_equal(sh.forward_leg(p), sh.forward_leg(q))
    else:
        assert np.array_equal(sh.backward_leg(p), sh.backward_leg(q))


# -- optimizer --------------------------------------------------------------------------------------

def test_toy_optimum_matches_scan():
    cfg = ocp.OcpConfig(gamma_reg=0.02, control_stride=10)
    grid, costs, _ = toy_scan(cfg)
    k = int(np.argmin(costs))
    res = ocp.optimize(toy_model(), TOY_PROBLEM, cfg, ocp.ControlProtocol.zeros(TOY_GRID))
    assert np.all(np.abs(res.protocol.p - grid[k]) < 1e-3)
    assert res.final_cost == pytest.approx(costs[k], rel=1e-6)
    assert res.final_cost <= costs[k] + 1e-12 * costs[k]


def test_huge_penalty_keeps_protocol_at_zero(short_nems):
    model, problem, grid = short_nems
    cfg = ocp.OcpConfig(gamma_reg=1e12, max_iters=20)
    res = ocp.optimize(model, problem, cfg, ocp.ControlProtocol.zeros(grid))
    assert np.max(np.abs(res.protocol.p)) < 1e-6
    assert res.ratio == pytest.approx(1.0, abs=1e-6)
    # zero is a kink of the penalty, so it is a stationary point rather than a stall
    assert res.converged and not res.stalled


def test_short_run_properties(short_nems):
    model, problem, grid = short_nems
    cfg = ocp.OcpConfig(max_iters=15)
    init = ocp.ControlProtocol(grid, random_protocol(grid, 7, 0.2))
    res = ocp.optimize(model, problem, cfg, init)
    hist = np.array(res.cost_history)
    assert np.all(np.diff(hist) <= 0)
    assert res.final_cost <= ocp.evaluate_cost(init, model, problem, cfg)[0]
    lo, hi = model.bounds
    assert np.all((res.protocol.p >= lo) & (res.protocol.p <= hi))
    assert res.ratio == res.final_projected_variance / res.steady_state_projected_variance
    again = ocp.optimize(model, problem, cfg, init)
    assert np.array_equal(again.protocol.p, res.protocol.p)
    assert again.cost_history == res.cost_history


def test_fd_and_adjoint_optimizers_agree(short_nems):
    model, problem, grid = short_nems
    runs = [ocp.optimize(model, problem, ocp.OcpConfig(max_iters=3, gradient_method=m),
                         ocp.ControlProtocol.zeros(grid)) for m in ("adjoint", "fd")]
    np.testing.assert_allclose(runs[0].cost_history, runs[1].cost_history, rtol=1e-6)


def test_flat_start_reports_stall():
    # a drift-free model independent of p: every line search fails at once
    model = ParametricModel(
        evaluate=lambda p: SystemMatrices(A=[[-1.0]], C=[[1.0]], Q=[[1.0]]),
        bounds=(-0.4, 0.4), omega0=1.0,
    )
    cfg = ocp.OcpConfig(gamma_reg=0.0, control_stride=10)
    res = ocp.optimize(model, TOY_PROBLEM, cfg, ocp.ControlProtocol(TOY_GRID, [0.1, -0.1]))
    assert res.converged and not res.stalled
    assert np.array_equal(res.protocol.p, [0.1, -0.1])


def test_nems_default_run_properties(nems_opt):
    res, sh, _ = nems_opt
    hist = np.array(res.cost_history)
    assert np.all(np.diff(hist) <= 0)
    assert np.all(np.abs(res.protocol.p) <= 0.4)
    assert res.final_cost < hist[0]
    # the optimized modulation is concentrated near t_p
    t = res.protocol.times
    near = np.abs(t - sh.problem.t_p) < 5 * sh.model.reference_period
    assert np.sum(np.abs(res.protocol.p[near])) > np.sum(np.abs(res.protocol.p[~near]))


# -- rectangular protocol ---------------------------------------------------------------------------

def test_zero_depth_rectangle():
    assert not np.any(ocp.rectangular_protocol(TimeGrid(0, 1, 100), 10.0, 0.0).p)


def test_rectangle_structure():
    w0 = 2 * math.pi
    grid = TimeGrid(0.0, 1.0, 200)  # one reference period
    pr = ocp.rectangular_protocol(grid, 2 * w0, 0.3)
    signs = np.sign(pr.p)
    flips = np.flatnonzero(np.diff(signs))
    assert len(flips) == 3 and np.all(np.abs(pr.p) == 0.3)
    # half of pi / W0 at each sign
    assert np.sum(signs > 0) == np.sum(signs < 0) == 100


def test_rectangle_window_and_errors():
    grid = TimeGrid(0.0, 4.0, 400)
    pr = ocp.rectangular_protocol(grid, 2 * math.pi, 0.2, window=(1.0, 2.0))
    t = grid.nodes[:-1] + grid.dt / 2
    assert not np.any(pr.p[(t < 1.0) | (t > 2.0)])
    assert np.all(np.abs(pr.p[(t > 1.0) & (t < 2.0)]) == 0.2)
    with pytest.raises(RangeError):
        ocp.rectangular_protocol(grid, 1.0, 0.2, window=(-1.0, 2.0))
    with pytest.raises(AdmissibilityError):
        ocp.rectangular_protocol(grid, 1.0, 0.5)


def test_particle_rectangle_follows_instantaneous_phase(particle):
    problem, grid = ocp.horizon(particle, periods_before=5, periods_after=5)
    pr = ocp.rectangular_protocol(grid, 2 * particle.omega0, 0.4, model=particle)
    fine = pr.per_step(1)
    phase = np.cumsum([particle.instantaneous_frequency(v) for v in fine]) * grid.dt
    flips = np.flatnonzero(np.diff(np.sign(fine)))
    # every half-cycle advances the oscillator phase by pi / 2 (2 W0 drive)
    steps = np.diff(phase[flips])
    assert np.allclose(steps, math.pi / 2, atol=2 * particle.omega0 * 1.2 * grid.dt)
    # the high-power half-cycles are shorter
    pos = np.sum(fine > 0)
    assert pos < np.sum(fine < 0)
