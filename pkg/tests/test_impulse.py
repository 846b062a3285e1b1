import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from impulse_shaping.errors import AlignmentError, NormalizationError, ShapeError
from impulse_shaping.impulse import (
    ImpulseProblem,
    combined_covariance,
    projected_variance,
    uncertainty_timetrace,
)
from impulse_shaping.riccati import BACKWARD, FORWARD, CovarianceTrajectory, TimeGrid, steady_state
from impulse_shaping.gaussian import SystemMatrices

SCALAR = SystemMatrices(A=[[-1.0]], C=[[1.0]], Q=[[1.0]])


def test_additivity():
    assert np.array_equal(combined_covariance(np.eye(2), np.eye(2)), 2 * np.eye(2))
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.array_equal(combined_covariance(np.zeros((2, 2)), P), P)


def test_scalar_combined_steady_states():
    s, p = steady_state(FORWARD, SCALAR), steady_state(BACKWARD, SCALAR)
    # forward -1 + sqrt 2, backward 1 + sqrt 2
    assert combined_covariance(s, p)[0, 0] == pytest.approx(2 * math.sqrt(2), abs=1e-8)
    both = 2 * (math.sqrt(2) - 1)
    assert combined_covariance(s, s)[0, 0] == pytest.approx(both, abs=1e-8)


def test_combined_shape_mismatch():
    with pytest.raises(ShapeError):
        combined_covariance(np.eye(2), np.eye(3))


def test_projection_examples():
    assert projected_variance(np.diag([2.0, 3.0]), (0, 1)) == 3.0
    assert projected_variance(np.eye(2), (0.6, 0.8)) == pytest.approx(1.0, rel=1e-15)
    n = np.array([1.0, 1.0]) / math.sqrt(2)
    assert projected_variance([[2.0, 1.0], [1.0, 2.0]], n) == pytest.approx(3.0, rel=1e-15)


def test_non_unit_direction():
    with pytest.raises(NormalizationError):
        projected_variance(np.eye(2), (1.0, 1.0))
    with pytest.raises(NormalizationError):
        ImpulseProblem(t_p=1.0, T=2.0, n=(0.0, 2.0))


def test_problem_validation_and_kick():
    pb = ImpulseProblem(t_p=1.0, T=2.0, alpha=3.0)
    assert np.array_equal(pb.kick, [0.0, 3.0])
    with pytest.raises(ValueError):
        ImpulseProblem(t_p=2.0, T=2.0)


@st.composite
def covs(draw, d=2):
    L = draw(hnp.arrays(float, (d, d), elements=st.floats(-3, 3)))
    return L @ L.T


@st.composite
def units(draw, d=2):
    v = draw(hnp.arrays(float, d, elements=st.floats(-1, 1)))
    norm = np.linalg.norm(v)
    if norm < 1e-3:
        v, norm = np.eye(d)[0], 1.0
    return v / norm


@given(covs(), covs())
def test_combination_is_symmetric_and_psd(S, P):
    a, b = combined_covariance(S, P), combined_covariance(P, S)
    assert np.array_equal(a, b)
    assert np.linalg.eigvalsh(a).min() >= -1e-12 * max(1.0, np.abs(a).max())


@given(covs(), units())
def test_projection_between_extreme_eigenvalues(S, n):
    w = np.linalg.eigvalsh(S)
    v = projected_variance(S, n)
    slack = 1e-10 * max(1.0, w.max())
    assert w.min() - slack <= v <= w.max() + slack


def test_timetrace_constant_at_equilibrium():
    g = TimeGrid(0, 1, 10)
    S = np.array([[1.0, 0.2], [0.2, 2.0]])
    P = np.array([[0.5, -0.1], [-0.1, 1.5]])
    fwd = CovarianceTrajectory(g, np.repeat(S[None], 11, axis=0))
    back = CovarianceTrajectory(g, np.repeat(P[None], 11, axis=0))
    t, sig = uncertainty_timetrace(fwd, back, (0, 1))
    assert np.array_equal(t, g.nodes)
    np.testing.assert_allclose(sig, math.sqrt(3.5), rtol=1e-15)
    _, sig_q = uncertainty_timetrace(fwd, back, (1, 0))
    np.testing.assert_allclose(sig_q, math.sqrt(1.5), rtol=1e-15)


def test_timetrace_scalar_oracle():
    g = TimeGrid(0, 1, 4)
    s = math.sqrt(2) - 1
    tr = CovarianceTrajectory(g, np.full((5, 1, 1), s))
    _, sig = uncertainty_timetrace(tr, tr, (1.0,))
    np.testing.assert_allclose(sig, math.sqrt(2 * s), rtol=1e-15)
    assert sig[0] == pytest.approx(0.910, abs=1e-3)


def test_timetrace_grid_mismatch():
    a = CovarianceTrajectory(TimeGrid(0, 1, 4), np.ones((5, 1, 1)))
    b = CovarianceTrajectory(TimeGrid(0, 1, 5), np.ones((6, 1, 1)))
    with pytest.raises(AlignmentError):
        uncertainty_timetrace(a, b, (1.0,))
