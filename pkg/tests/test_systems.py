import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_continuous_lyapunov

from impulse_shaping.errors import AdmissibilityError, ConfigError
from impulse_shaping.systems import (
    HBAR,
    K_B,
    NEMS_REFERENCE,
    PARTICLE_REFERENCE,
    NemsParams,
    ParticleParams,
    nems_model,
    particle_model,
    thermal_force_psd,
    unconditional_covariance,
    zero_point_scales,
)

P = PARTICLE_REFERENCE
bounded = st.floats(-0.4, 0.4)


def test_zero_point_position():
    q, p = zero_point_scales(NEMS_REFERENCE.mass, NEMS_REFERENCE.Omega0)
    assert q == pytest.approx(math.sqrt(1.0546e-34 / (2.8e-12 * 2 * math.pi * 33.7e3)), rel=1e-4)
    assert q == pytest.approx(1.33e-14, rel=0.01)
    assert q * p == pytest.approx(HBAR, rel=1e-14)


def test_thermal_force_noise_dimensions():
    # 4 k_B T Gamma m carries units of N^2/Hz; the stated 5.3e-31 N^2/Hz is used for the reference run
    assert thermal_force_psd(295, 2.07, 2.8e-12) == pytest.approx(9.44e-32, rel=2e-3)
    assert NEMS_REFERENCE.force_psd == 5.3e-31
    fdt = NemsParams(**{**NEMS_REFERENCE.__dict__, "S_f": None})
    assert fdt.force_psd == thermal_force_psd(295, 2.07, 2.8e-12)


def test_nems_matrices_at_rest(nems):
    M = nems(0.0)
    W = NEMS_REFERENCE.Omega0
    assert M.A[1, 0] == -W
    assert M.A[0, 1] == W and M.A[1, 1] == -2.07
    q_zpf, p_zpf = zero_point_scales(2.8e-12, W)
    assert M.C[0, 0] == pytest.approx(q_zpf / math.sqrt(4e-28), rel=1e-15)
    assert M.Q[1, 1] == pytest.approx(5.3e-31 / p_zpf**2, rel=1e-15)
    assert M.Q[0, 0] == 0.0


def test_nems_bounds(nems):
    nems(-0.4), nems(0.4)
    with pytest.raises(AdmissibilityError):
        nems(0.41)


def test_cold_resonator_warns():
    with pytest.warns(RuntimeWarning):
        nems_model(NemsParams(Omega0=2 * math.pi * 1e9, Gamma=1.0, mass=1e-18, temperature=0.01,
                              S_m=1e-30, S_f=1e-40))


def test_particle_reference_values(particle):
    M = particle(0.0)
    assert M.C[0, 0] == pytest.approx(math.sqrt(328000.0), rel=1e-15)
    assert M.C[0, 0] == pytest.approx(572.7, abs=0.05)
    assert M.Q[1, 1] / particle(0.0).Q[1, 1] == 1.0
    assert particle(0.4).Q[1, 1] / M.Q[1, 1] == pytest.approx(1.4, rel=1e-15)
    assert particle(-0.4).A[1, 0] == pytest.approx(-P.Omega0 * math.sqrt(0.6), rel=1e-15)
    assert M.eta[0, 0] == 0.4


def test_particle_power_must_stay_positive(particle):
    with pytest.raises(AdmissibilityError):
        particle(-1.0)


@given(bounded)
def test_backaction_tracks_measurement_strength(p):
    M = particle_model(P)(p)
    assert M.C[0, 0] ** 2 / (4 * M.Q[1, 1]) == pytest.approx(1.0, rel=1e-14)


@given(bounded)
def test_models_have_no_cross_term_and_fixed_efficiency(p):
    for model in (nems_model(NEMS_REFERENCE), particle_model(P)):
        M = model(p)
        assert not np.any(M.N)
        assert M.eta[0, 0] == model(0.0).eta[0, 0]


@given(bounded)
def test_evaluate_is_deterministic(p):
    model = particle_model(P)
    a, b = model(p), model(p)
    for f in ("A", "C", "Q", "N", "eta"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_instantaneous_frequency(nems, particle):
    assert nems.instantaneous_frequency(0.3) == pytest.approx(nems.omega0 * math.sqrt(1.3))
    assert particle.instantaneous_frequency(0.3) == pytest.approx(particle.omega0 * 1.3**0.25)


@pytest.mark.parametrize("field,value", [("Gamma", 0.0), ("Gamma", -1.0), ("mass", float("nan"))])
def test_invalid_nems_params(field, value):
    kw = {**NEMS_REFERENCE.__dict__, field: value}
    with pytest.raises(ConfigError):
        NemsParams(**kw)


def test_invalid_bounds_and_efficiency():
    with pytest.raises(ConfigError):
        ParticleParams(Omega0=1.0, Gamma=1.0, kappa0=1.0, eta_hom=0.0)
    with pytest.raises(ConfigError):
        ParticleParams(Omega0=1.0, Gamma=1.0, kappa0=1.0, eta_hom=0.5, p_bounds=(0.2, 0.1))
    with pytest.raises(ConfigError):
        ParticleParams(Omega0=1.0, Gamma=1.0, kappa0=1.0, eta_hom=0.5, p_bounds=(-1.2, 0.1))


def test_unconditional_covariance_against_scipy(nems, particle):
    for model in (nems, particle):
        for p in (-0.4, 0.0, 0.4):
            M = model(p)
            X = solve_continuous_lyapunov(M.A, -M.Q)
            np.testing.assert_allclose(unconditional_covariance(M), X, rtol=1e-8,
                                       atol=1e-10 * np.abs(X).max())


def test_equipartition_with_fluctuation_dissipation_noise():
    # with the one-sided force PSD 4 k_B T Gamma m, <q^2> = 2 k_B T / (m W^2)
    params = NemsParams(**{**NEMS_REFERENCE.__dict__, "S_f": None})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        model = nems_model(params)
    X = unconditional_covariance(model(0.0))
    q_zpf, _ = zero_point_scales(params.mass, params.Omega0)
    target = 2 * K_B * params.temperature / (params.mass * params.Omega0**2)
    assert X[0, 0] * q_zpf**2 == pytest.approx(target, rel=1e-6)
