import numpy as np
import pytest

from engine.control import midpoint_value, positive_terminal
from engine.entropy import (
    GaussianMixtureTarget,
    NegativeEntropyError,
    ProfileTarget,
    SphereZonalTarget,
    alpha_trajectory,
    bridge_law_check,
    entropy_dual_bound,
    follmer_sample_euclidean,
    follmer_sample_sphere,
    logsob_check,
    zonal_entropy_fisher,
)
from engine.spectral import ZonalFunction, semigroup
from engine.stochastics import BrownianBatch, TimeGrid

EQUATOR = np.array([0.0, 1.0, 0.0])


def test_shift_entropy_and_fisher_closed_form():
    target = GaussianMixtureTarget.shift(1.5, horizon=2.0)
    assert target.entropy()[0] == pytest.approx(1.5 ** 2 / 4.0, abs=1e-10)
    assert target.fisher()[0] == pytest.approx(1.5 ** 2 / 4.0, abs=1e-10)


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixtureTarget([[0.0], [1.0]], weights=[0.5, 0.6])
    with pytest.raises(ValueError):
        GaussianMixtureTarget([[0.0]], horizon=0.0)


def test_mixture_entropy_below_component_bound():
    pair = GaussianMixtureTarget.symmetric_pair(1.0)
    entropy, _ = pair.entropy()
    # mixing lowers the entropy of each shifted component
    assert 0.0 < entropy < 0.5


def test_reference_target_has_zero_drift():
    target = GaussianMixtureTarget.reference(2)
    np.testing.assert_array_equal(target.grad_log_semigroup(0.3, np.ones((4, 2))), np.zeros((4, 2)))


def test_follmer_euclidean_shift():
    target = GaussianMixtureTarget.shift(1.0)
    batch = BrownianBatch(TimeGrid(1.0, 100), 1, 20_000, seed=1)
    samples, report = follmer_sample_euclidean(target, batch)
    assert samples.shape == (20_000,)
    assert report.energy_matches(4.0)
    assert report.law_matches
    assert abs(report.inverse_weight - 1.0) < 5 * report.inverse_weight_stderr


def test_follmer_euclidean_profile_target():
    b = 0.8
    target = ProfileTarget(ZonalFunction(lambda t: b * np.sin(2 * t), "sin", lambda t: 2 * b * np.cos(2 * t)))
    batch = BrownianBatch(TimeGrid(1.0, 200), 1, 5000, seed=3)
    _, report = follmer_sample_euclidean(target, batch)
    assert report.energy_matches(4.0)
    assert report.law_matches


def test_follmer_sampler_checks_setting():
    target = GaussianMixtureTarget.shift(1.0)
    batch = BrownianBatch(TimeGrid(1.0, 10), 1, 10, seed=0)
    with pytest.raises(ValueError):
        follmer_sample_sphere(target, batch)


def test_sphere_target_is_normalized():
    for reference in ("heat", "uniform"):
        target = SphereZonalTarget(2, ZonalFunction.exponential(1.0), EQUATOR, 1.0, reference=reference)
        assert target.integrate(lambda t: np.ones_like(t)) == pytest.approx(1.0, abs=1e-8)
        assert target.entropy()[0] > 0


def test_sphere_target_validation():
    with pytest.raises(ValueError):
        SphereZonalTarget(2, ZonalFunction.linear(1.0), EQUATOR, 1.0)
    with pytest.raises(ValueError):
        SphereZonalTarget(2, ZonalFunction.exponential(1.0), EQUATOR, 1.0, reference="flat")
    with pytest.raises(ValueError):
        SphereZonalTarget(1, ZonalFunction.exponential(1.0), np.array([1.0, 0.0]), 1.0)


def test_follmer_sphere_tilt():
    target = SphereZonalTarget(2, ZonalFunction.exponential(1.0), EQUATOR, 1.0)
    batch = BrownianBatch(TimeGrid(1.0, 200), 2, 5000, seed=2)
    samples, report = follmer_sample_sphere(target, batch)
    assert np.all(np.abs(samples) <= 1.0 + 1e-12)
    assert report.energy_matches(4.0)
    assert report.law_matches
    for moment in report.moments:
        assert abs(moment.value - moment.oracle) < 5 * moment.stderr + 0.02


def test_dual_bound_and_equality():
    target = SphereZonalTarget(3, ZonalFunction.exponential(1.5), np.array([0.0, 0.0, 1.0, 0.0]), 0.7)
    rows = entropy_dual_bound(target, [ZonalFunction.linear(1.0), ZonalFunction.power(3)])
    assert all(row.holds for row in rows)
    assert rows[-1].test_function == "log f"
    assert rows[-1].value == pytest.approx(rows[-1].entropy, abs=1e-10)


def test_bridge_law_euclidean():
    target = GaussianMixtureTarget.shift(1.0)
    batch = BrownianBatch(TimeGrid(1.0, 50), 1, 20_000, seed=9)
    check = bridge_law_check(target, midpoint_value, batch)
    assert abs(check.difference) < 5 * check.stderr + 0.02


def test_bridge_law_sphere():
    target = SphereZonalTarget(2, ZonalFunction.exponential(1.0), EQUATOR, 1.0)
    batch = BrownianBatch(TimeGrid(1.0, 50), 2, 10_000, seed=10)
    check = bridge_law_check(target, positive_terminal, batch)
    assert abs(check.difference) < 5 * check.stderr + 0.02


def test_uniform_measure_has_zero_entropy():
    entropy, fisher = zonal_entropy_fisher(3, ZonalFunction.constant(1.0))
    assert entropy == pytest.approx(0.0, abs=1e-12)
    assert fisher == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_dimensional_log_sobolev(n):
    for row in logsob_check(n):
        assert row.dimensional_holds
        assert row.plain_holds
        assert row.ordered
        assert 0.0 < row.tightness <= 1.0 + 1e-9


def test_log_sobolev_needs_curvature():
    with pytest.raises(ValueError):
        logsob_check(1)


def test_alpha_trajectory_integrates_to_twice_entropy():
    target = SphereZonalTarget(2, ZonalFunction.exponential(1.0), EQUATOR, 2.0)
    batch = BrownianBatch(TimeGrid(2.0, 200), 2, 5000, seed=12)
    traj = alpha_trajectory(target, batch)
    assert traj.alpha.shape == (200,)
    assert traj.times[-1] == pytest.approx(2.0 - traj.dt)
    assert traj.alpha_T == traj.alpha[-1]
    tol = 5 * traj.integral_stderr + abs(traj.integral_bias) + 0.02
    assert abs(traj.integral - 2.0 * traj.entropy) < tol
    assert traj.curvature_term == pytest.approx(float(semigroup(2).laplacian(2.0, target.density, 0.0)))


def test_alpha_curvature_bounds_on_long_horizon():
    target = SphereZonalTarget(2, ZonalFunction.exponential(1.0), EQUATOR, 4.0)
    traj = alpha_trajectory(target, BrownianBatch(TimeGrid(4.0, 400), 2, 4000, seed=13))
    assert traj.horizon_long_enough
    bound = traj.pointwise_bound()
    assert bound.shape == traj.alpha.shape
    # one step before T the bound is close to alpha(T); it increases towards T
    assert bound[-1] == pytest.approx(traj.alpha_T * 2 * traj.kappa_T
                                      / (np.exp(traj.kappa_T * traj.dt) * (2 * traj.kappa_T + traj.alpha_T)
                                         - traj.alpha_T))
    assert np.all(np.diff(bound) > 0)
    assert traj.integrated_bound() > 0


def test_negative_entropy_error_type():
    assert issubclass(NegativeEntropyError, ArithmeticError)
