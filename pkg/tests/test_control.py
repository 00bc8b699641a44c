import numpy as np
import pytest

from engine.control import (
    ControlProblem,
    EstimateError,
    ZonalGradientPolicy,
    constant_one,
    gap_shrink,
    gaussian_log_expectation,
    girsanov_identity_check,
    h_transform_policy,
    log_partition,
    running_max,
    smallest_coarsening,
    terminal_value,
    verify_variational,
)
from engine.simulate import EuclideanModel
from engine.spectral import ZonalFunction, semigroup
from engine.stochastics import BrownianBatch, ConstantPolicy, FeedbackPolicy, PiecewisePolicy, TimeGrid, ZeroPolicy


def test_problem_validation():
    with pytest.raises(ValueError):
        ControlProblem.sphere_zonal(2, ZonalFunction.linear(), [1.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        ControlProblem.jacobi_zonal(2, ZonalFunction.linear(), x0=1.5)
    with pytest.raises(ValueError):
        ControlProblem("euclidean", 1, np.zeros(1), 1.0)
    with pytest.raises(ValueError):
        ControlProblem.euclidean_linear([1.0], horizon=0.0)


def test_closed_form_log_partition():
    problem = ControlProblem.euclidean_linear([1.0, 2.0], x0=[0.5, 0.0], horizon=2.0)
    lhs = log_partition(problem)
    assert lhs.method == "closed_form"
    assert lhs.value == pytest.approx(0.5 + 0.5 * 5.0 * 2.0)


def test_constant_payoff_short_circuits():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.constant(0.7), [1.0, 0.0, 0.0])
    assert log_partition(problem).method == "constant"
    assert isinstance(h_transform_policy(problem, 0.01), ZeroPolicy)


def test_gauss_hermite_against_closed_form():
    value = gaussian_log_expectation(ZonalFunction.linear(1.5), 0.3, 2.0)
    assert value == pytest.approx(1.5 * 0.3 + 0.5 * 1.5 ** 2 * 2.0, abs=1e-10)


def test_spectral_log_partition_for_linear_tilt():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.linear(1.0), [0.0, 1.0, 0.0], horizon=1.0)
    lhs = log_partition(problem)
    S = semigroup(2)
    assert lhs.method == "spectral"
    assert lhs.value == pytest.approx(np.log(S.apply(1.0, ZonalFunction.exponential(1.0), 0.0)), abs=1e-12)


def test_mc_log_partition_matches_closed_form():
    problem = ControlProblem.euclidean_linear([0.5])
    batch = BrownianBatch(TimeGrid(1.0, 4), 1, 20_000, seed=2)
    mc = log_partition(problem, method="mc", batch=batch)
    assert abs(mc.value - 0.125) < 5 * mc.stderr


def test_mc_log_partition_refuses_noisy_estimate():
    problem = ControlProblem.euclidean_linear([4.0])
    batch = BrownianBatch(TimeGrid(1.0, 2), 1, 50, seed=2)
    with pytest.raises(EstimateError):
        log_partition(problem, method="mc", batch=batch)


def test_spectral_method_rejects_euclidean():
    with pytest.raises(ValueError):
        log_partition(ControlProblem.euclidean_linear([1.0]), method="spectral")


def test_optimal_policy_closes_euclidean_gap():
    problem = ControlProblem.euclidean_linear([1.0])
    batch = BrownianBatch(TimeGrid(1.0, 50), 1, 20_000, seed=7)
    optimal = h_transform_policy(problem, batch.grid.dt)
    policies = [optimal, ZeroPolicy(1), PiecewisePolicy(1, 1.0, 4, 1.0, seed=1)]
    gaps = {g.policy: g for g in verify_variational(problem, policies, batch, optimal=optimal)}
    assert gaps["h-transform"].equality_holds(4.0)
    assert gaps["zero"].gap > 0.4
    for gap in gaps.values():
        assert gap.lower_bound_holds(4.0)


def test_sphere_h_transform_closes_gap():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.linear(1.0), [0.0, 1.0, 0.0], horizon=0.5)
    batch = BrownianBatch(TimeGrid(0.5, 100), 2, 8000, seed=5)
    optimal = h_transform_policy(problem, batch.grid.dt)
    gaps = verify_variational(problem, [optimal, ZeroPolicy(2), ConstantPolicy([0.5, 0.5])], batch, optimal=optimal)
    assert gaps[0].equality_holds(4.0)
    assert gaps[1].gap > 4 * gaps[1].stderr
    assert gaps[2].lower_bound_holds(4.0)


def test_gradient_policy_clamps_remaining_time():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.linear(1.0), [1.0, 0.0, 0.0], horizon=1.0)
    policy = ZonalGradientPolicy(problem, problem.profile.exp(), dt=0.1)
    assert policy.remaining(0.99) == pytest.approx(0.1)
    assert policy.remaining(0.5) == pytest.approx(0.5)


def test_jacobi_gradient_vanishes_at_boundary():
    problem = ControlProblem.jacobi_zonal(2, ZonalFunction.linear(1.0), x0=0.0)
    policy = h_transform_policy(problem, 0.01)
    u = policy(0.0, np.array([-1.0, 0.0, 1.0]))
    assert u.shape == (3, 1)
    assert u[0, 0] == 0.0 and u[2, 0] == 0.0
    assert u[1, 0] > 0


def test_girsanov_identity_for_constant_drift():
    batch = BrownianBatch(TimeGrid(1.0, 20), 1, 20_000, seed=4)
    check = girsanov_identity_check(ConstantPolicy([0.5]), terminal_value, batch)
    assert abs(check.difference) < 5 * check.stderr
    assert abs(check.weight_mean - 1.0) < 5 * check.weight_stderr


def test_girsanov_identity_for_feedback_drift():
    batch = BrownianBatch(TimeGrid(1.0, 20), 1, 20_000, seed=6)
    policy = FeedbackPolicy(1, lambda t, x: 0.5 * np.tanh(x))
    check = girsanov_identity_check(policy, running_max, batch)
    assert abs(check.difference) < 5 * check.stderr
    one = girsanov_identity_check(policy, constant_one, batch)
    assert one.plain == 1.0


def test_ou_model_needs_mc():
    problem = ControlProblem.euclidean_profile(ZonalFunction.linear(1.0), model=EuclideanModel.ornstein_uhlenbeck(1))
    with pytest.raises(ValueError):
        log_partition(problem, method="quadrature")
    with pytest.raises(ValueError):
        h_transform_policy(problem, 0.01)


def test_smallest_coarsening():
    assert smallest_coarsening(40) == 2
    assert smallest_coarsening(15) == 3
    assert smallest_coarsening(7) == 7
    with pytest.raises(ValueError):
        smallest_coarsening(1)


def test_h_transform_gap_halves_with_dt():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.linear(1.0), [0.0, 1.0, 0.0], horizon=1.0)
    batch = BrownianBatch(TimeGrid(1.0, 40), 2, 20_000, seed=11)
    optimal = h_transform_policy(problem, batch.grid.dt)
    shrink = gap_shrink(problem, optimal, batch, log_partition(problem))
    assert shrink.factor == 2
    assert shrink.expected_range() == (1.5, 3.0)
    assert shrink.resolved(3.0)
    assert 1.5 <= shrink.ratio <= 3.0


def test_gap_shrink_of_constant_payoff_is_unresolved():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.constant(0.3), [0.0, 1.0, 0.0])
    batch = BrownianBatch(TimeGrid(1.0, 10), 2, 500, seed=1)
    shrink = gap_shrink(problem, h_transform_policy(problem, batch.grid.dt), batch, log_partition(problem))
    assert shrink.fine_gap == pytest.approx(0.0, abs=1e-12)
    assert not shrink.resolved(3.0)


def test_bias_estimate_with_odd_step_count():
    problem = ControlProblem.sphere_zonal(2, ZonalFunction.linear(1.0), [0.0, 1.0, 0.0], horizon=0.5)
    batch = BrownianBatch(TimeGrid(0.5, 15), 2, 4000, seed=5)
    optimal = h_transform_policy(problem, batch.grid.dt)
    gaps = verify_variational(problem, [optimal, ZeroPolicy(2)], batch, optimal=optimal)
    assert gaps[0].bias != 0.0
    assert gaps[1].bias == 0.0
    assert gaps[0].equality_holds(4.0)
