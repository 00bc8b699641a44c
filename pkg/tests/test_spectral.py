import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from engine.spectral import (
    NuMeasure,
    PositivityError,
    ZonalFunction,
    laplacian_eigen_check,
    log_semigroup_gradient,
    nu_quadrature,
    semigroup,
)

DIMENSIONS = [2, 3, 5]


@pytest.mark.parametrize("n", DIMENSIONS)
def test_nu_mass_and_moments(n):
    nu = NuMeasure(n)
    assert nu.integrate(lambda t: np.ones_like(t)) == pytest.approx(1.0, abs=1e-12)
    assert nu.moment(1) == pytest.approx(0.0, abs=1e-14)
    assert nu.moment(2) == pytest.approx(1.0 / (n + 1), abs=1e-12)
    assert nu.moment(4) == pytest.approx(3.0 / ((n + 1) * (n + 3)), abs=1e-12)


@pytest.mark.parametrize("n", DIMENSIONS)
def test_nu_density_matches_beta(n):
    t = np.linspace(-0.9, 0.9, 7)
    beta = 0.5 * stats.beta.pdf(0.5 * (t + 1.0), 0.5 * n, 0.5 * n)
    np.testing.assert_allclose(NuMeasure(n).density(t), beta, rtol=1e-10)


def test_nu_rejects_non_finite_integrand():
    with pytest.raises(ValueError, match="not finite"):
        nu_quadrature(2, lambda t: np.where(t > 0, 1.0, np.nan))


@pytest.mark.parametrize("n", DIMENSIONS)
def test_first_eigenfunction(n):
    S = semigroup(n)
    x = np.linspace(-1.0, 1.0, 9)
    np.testing.assert_allclose(S.apply(0.8, ZonalFunction.linear(), x), np.exp(-0.4 * n) * x, atol=1e-10)


@pytest.mark.parametrize("n", DIMENSIONS)
def test_basis_orthonormal(n):
    S = semigroup(n)
    assert np.max(np.abs(S.gram() - np.eye(S.truncation + 1))) < 1e-10


@pytest.mark.parametrize("n", DIMENSIONS)
def test_eigenrelations(n):
    assert laplacian_eigen_check(n, degree=1) < 1e-12
    assert laplacian_eigen_check(n, degree=3) < 1e-9


@given(st.floats(min_value=0.05, max_value=1.0), st.floats(min_value=0.05, max_value=1.0),
       st.floats(min_value=-1.0, max_value=1.0))
@settings(max_examples=30, deadline=None)
def test_semigroup_property(s, t, x):
    S = semigroup(3)
    g = ZonalFunction.exponential(1.5)
    inner = ZonalFunction(lambda y: S.apply(t, g, y), "Q_t g")
    assert S.apply(s, inner, x) == pytest.approx(S.apply(s + t, g, x), abs=1e-9)


@pytest.mark.parametrize("n", DIMENSIONS)
def test_stationarity_and_relaxation(n):
    S = semigroup(n)
    g = ZonalFunction.gaussian_bump(3.0, 0.4)
    evolved = ZonalFunction(lambda y: S.apply(0.6, g, y), "Q g")
    assert S.measure.integrate(evolved) == pytest.approx(S.measure.integrate(g), abs=1e-10)
    assert S.apply(50.0, g, 0.3) == pytest.approx(S.measure.integrate(g), abs=1e-10)


def test_short_time_recovers_function():
    S = semigroup(2)
    g = ZonalFunction.exponential(1.0)
    assert S.apply(1e-4, g, 0.2) == pytest.approx(np.exp(0.2), rel=1e-3)


def test_positive_function_stays_positive():
    S = semigroup(2)
    x = np.linspace(-1.0, 1.0, 41)
    assert np.all(S.apply(0.3, ZonalFunction.gaussian_bump(20.0), x) > 0)


def test_log_gradient_matches_finite_difference():
    S = semigroup(3)
    f = ZonalFunction.linear(1.3)
    x = np.array([-0.7, 0.0, 0.5])
    exact = log_semigroup_gradient(S, 0.4, f, x)
    fd = S.log_gradient_fd(0.4, f.exp(), x)
    np.testing.assert_allclose(exact, fd, atol=1e-6)


def test_log_gradient_of_constant_is_zero():
    S = semigroup(2)
    np.testing.assert_allclose(S.log_gradient(0.5, ZonalFunction.constant(2.0), np.linspace(-1, 1, 5)), 0.0,
                               atol=1e-12)


def test_heat_kernel_is_a_density():
    S = semigroup(3)
    kernel = ZonalFunction(lambda t: S.heat_kernel(0.5, 0.4, t), "q")
    assert S.measure.integrate(kernel) == pytest.approx(1.0, abs=1e-10)
    # reproduces the semigroup on a test function
    g = ZonalFunction.power(2)
    weighted = ZonalFunction(lambda t: S.heat_kernel(0.5, 0.4, t) * g(t), "q g")
    assert S.measure.integrate(weighted) == pytest.approx(S.apply(0.5, g, 0.4), abs=1e-10)


def test_laplacian_of_linear_function():
    S = semigroup(2)
    x = np.array([-0.3, 0.6])
    # Delta x_i = -n x_i, so Delta Q_T x = -n e^{-nT/2} x
    np.testing.assert_allclose(S.laplacian(0.5, ZonalFunction.linear(), x), -2.0 * np.exp(-0.5) * x, atol=1e-10)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        semigroup(2).apply(-1.0, ZonalFunction.linear(), 0.0)
    with pytest.raises(ValueError):
        semigroup(2).heat_kernel(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        NuMeasure(2, order=0)


def test_positivity_error_is_arithmetic():
    assert issubclass(PositivityError, ArithmeticError)
