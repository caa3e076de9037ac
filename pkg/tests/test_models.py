import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from bpfd.errors import DomainError, NoDoubleWell
from bpfd.models import (
    EnergyModel,
    allen_cahn_accuracy_solution,
    dt_bound,
    f_prime,
    manufactured_forcing,
    pointwise_rhs_map,
    shear_velocity,
    solve_beta,
)

from oracles import log_well


def test_polynomial_examples():
    m = EnergyModel.polynomial(0.05)
    assert m.beta == 1.0
    assert m.f2max == 2.0
    assert dt_bound(m) == pytest.approx(0.025)
    np.testing.assert_array_equal(f_prime(m, np.array([-1.0, 0.0, 1.0, 2.0])), [0, 0, 0, 6])


def test_log_well_matches_bisection():
    for theta, theta_c in [(1.0, 2.0), (0.5, 0.8), (1.0, 1.1), (0.5, 1.6)]:
        m = EnergyModel.logarithmic(0.1, theta, theta_c)
        assert m.beta == pytest.approx(log_well(theta, theta_c), abs=1e-12)
        assert abs(m.f_prime(m.beta)) < 1e-12


def test_log_f2max_value():
    m = EnergyModel.logarithmic(1.0, 1.0, 2.0)
    b = log_well(1.0, 2.0)
    assert m.f2max == pytest.approx(1 / (1 - b * b) - 2, rel=1e-10)
    assert dt_bound(m) == pytest.approx(1 / m.f2max)


def test_f2max_dominates_samples():
    m = EnergyModel.logarithmic(1.0, 0.3, 0.9)
    xs = np.linspace(-m.beta, m.beta, 2001)
    assert m.f_second(xs).max() <= m.f2max + 1e-12


@pytest.mark.parametrize(
    "model",
    [EnergyModel.polynomial(1.0), EnergyModel.logarithmic(1.0, 0.7, 1.5)],
)
def test_derivatives_by_differences(model):
    xs = np.linspace(-0.9, 0.9, 19)
    h = 1e-5
    fd1 = (model.energy(xs + h) - model.energy(xs - h)) / (2 * h)
    fd2 = (model.f_prime(xs + h) - model.f_prime(xs - h)) / (2 * h)
    np.testing.assert_allclose(model.f_prime(xs), fd1, atol=1e-8)
    np.testing.assert_allclose(model.f_second(xs), fd2, atol=1e-7)


def test_no_double_well():
    weak = EnergyModel.logarithmic(0.1, 1.0, 0.5)
    assert not weak.has_double_well
    with pytest.raises(NoDoubleWell):
        solve_beta(weak)
    with pytest.raises(NoDoubleWell):
        dt_bound(weak)
    with pytest.raises(NoDoubleWell):
        solve_beta(EnergyModel.logarithmic(0.1, 1.0, 2.0, log_variant="linear"))
    with pytest.raises(NoDoubleWell):
        solve_beta(EnergyModel.null())


def test_null_model():
    m = EnergyModel.null()
    assert dt_bound(m) == math.inf
    assert not f_prime(m, np.ones(3)).any()


def test_domain_error():
    m = EnergyModel.logarithmic(0.1, 1.0, 2.0)
    with pytest.raises(DomainError):
        m.f_prime(np.array([0.5, 1.0]))
    with pytest.raises(DomainError):
        m.energy(-1.2)


def test_bad_parameters():
    with pytest.raises(ValueError):
        EnergyModel.polynomial(0.0)
    with pytest.raises(ValueError):
        EnergyModel.logarithmic(1.0, 1.0, 2.0, log_variant="cubic")


@settings(max_examples=200)
@given(
    st.floats(0.5, 20.0),
    st.floats(1.05, 6.0),
    st.floats(0.01, 1.0),
    st.floats(0.0, 1.0),
)
def test_rhs_map_stays_in_wells_log(theta, ratio, eps, frac):
    m = EnergyModel.logarithmic(eps, theta, ratio * theta)
    assume(m.has_double_well and m.beta < 1 - 1e-6)
    dt = frac * dt_bound(m)
    xs = np.linspace(-m.beta, m.beta, 401)
    out = pointwise_rhs_map(m, dt, xs)
    assert np.abs(out).max() <= m.beta * (1 + 1e-12)


@given(st.floats(0.001, 10.0), st.floats(0.0, 1.0))
def test_rhs_map_stays_in_wells_polynomial(eps, frac):
    m = EnergyModel.polynomial(eps)
    out = pointwise_rhs_map(m, frac * dt_bound(m), np.linspace(-1, 1, 401))
    assert np.abs(out).max() <= 1 + 1e-12


def test_rhs_map_can_leave_wells_beyond_bound():
    m = EnergyModel.polynomial(1.0)
    out = pointwise_rhs_map(m, 3.0 * dt_bound(m), np.linspace(-1, 1, 401))
    assert np.abs(out).max() > 1


def test_manufactured_solution_derivatives():
    ex = allen_cahn_accuracy_solution()
    rng = np.random.default_rng(0)
    x, y, t = rng.uniform(0, 2 * math.pi, (3, 50))
    h = 1e-4
    np.testing.assert_allclose(ex.phi_t(x, y, t), (ex.phi(x, y, t + h) - ex.phi(x, y, t - h)) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(ex.phi_x(x, y, t), (ex.phi(x + h, y, t) - ex.phi(x - h, y, t)) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(ex.phi_y(x, y, t), (ex.phi(x, y + h, t) - ex.phi(x, y - h, t)) / (2 * h), atol=1e-7)
    lap = (
        ex.phi(x + h, y, t) + ex.phi(x - h, y, t) + ex.phi(x, y + h, t) + ex.phi(x, y - h, t) - 4 * ex.phi(x, y, t)
    ) / h**2
    np.testing.assert_allclose(ex.laplacian(x, y, t), lap, atol=1e-5)


def test_forcing_on_a_zero_line():
    m = EnergyModel.polynomial(0.05)
    ex = allen_cahn_accuracy_solution()
    f = manufactured_forcing(m, 0.1, ex, shear_velocity)
    # where sin x = 0 only the diffusion term survives: -mu * 2 amp(t) sin y
    y, t = np.array([0.3, 1.0]), 0.7
    expected = -0.1 * 2 * (0.75 + 0.25 * math.sin(t)) * np.sin(y)
    np.testing.assert_allclose(f(np.array([0.0, math.pi]), y, t), expected, atol=1e-12)


def test_shear_velocity_is_divergence_free():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0, 2 * math.pi, (2, 20))
    h = 1e-6
    du = (shear_velocity(x + h, y)[0] - shear_velocity(x - h, y)[0]) / (2 * h)
    dv = (shear_velocity(x, y + h)[1] - shear_velocity(x, y - h)[1]) / (2 * h)
    np.testing.assert_allclose(du + dv, 0, atol=1e-8)
