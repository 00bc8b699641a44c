import numpy as np
import pytest

from engine.geometry import SphereFrame, SpherePoint
from engine.simulate import (
    EuclideanModel,
    PathAbortError,
    check_aborts,
    coordinate_projection_consistency,
    develop,
    moments,
    simulate_controlled_euclidean,
    simulate_horizontal,
    simulate_jacobi,
)
from engine.stochastics import BrownianBatch, ConstantPolicy, FeedbackPolicy, TimeGrid, ZeroPolicy


def test_brownian_terminal_law():
    batch = BrownianBatch(TimeGrid(2.0, 20), 1, 20_000, seed=3)
    result = simulate_controlled_euclidean(EuclideanModel.brownian(1), ZeroPolicy(1), [0.0], batch)
    x = result["terminal"][:, 0]
    assert abs(np.mean(x)) < 5 * np.sqrt(2.0 / x.size)
    assert np.var(x) == pytest.approx(2.0, rel=0.05)


def test_constant_drift_shifts_and_costs():
    batch = BrownianBatch(TimeGrid(1.0, 10), 2, 100, seed=1)
    plain = simulate_controlled_euclidean(EuclideanModel.brownian(2), ZeroPolicy(2), [0.0, 0.0], batch)
    pushed = simulate_controlled_euclidean(EuclideanModel.brownian(2), ConstantPolicy([1.0, -2.0]), [0.0, 0.0],
                                           batch)
    np.testing.assert_allclose(pushed["terminal"] - plain["terminal"], np.tile([1.0, -2.0], (100, 1)), atol=1e-12)
    np.testing.assert_allclose(pushed["energy"], 0.5 * 5.0, rtol=1e-12)


def test_workers_do_not_change_results():
    batch = BrownianBatch(TimeGrid(1.0, 5), 1, 5000, seed=8)
    one = simulate_controlled_euclidean(EuclideanModel.brownian(1), ZeroPolicy(1), [0.0], batch, workers=1)
    three = simulate_controlled_euclidean(EuclideanModel.brownian(1), ZeroPolicy(1), [0.0], batch, workers=3)
    np.testing.assert_array_equal(one["terminal"], three["terminal"])


def test_sphere_paths_stay_on_sphere_and_decay():
    n, T = 2, 0.5
    x0 = np.array([0.6, 0.8, 0.0])
    batch = BrownianBatch(TimeGrid(T, 100), n, 20_000, seed=4)
    result = simulate_horizontal(SphereFrame.at(SpherePoint(x0)), ZeroPolicy(n), batch)
    terminal = result["terminal"]
    assert np.max(np.abs(np.linalg.norm(terminal, axis=1) - 1.0)) < 1e-12
    mean, se = moments(terminal[:, 0], orders=(1,))[0]
    assert abs(mean - np.exp(-0.5 * n * T) * 0.6) < 5 * se + batch.grid.dt


def test_keep_base_only():
    batch = BrownianBatch(TimeGrid(1.0, 6), 2, 10, seed=0)

    def summarize(block):
        assert block.path.basis is None
        assert block.path.base.shape == (7, 10, 3)
        return {"aborted": block.aborted}

    simulate_horizontal(SphereFrame.at(SpherePoint(np.array([0.0, 0.0, 1.0]))), ZeroPolicy(2), batch, summarize,
                        keep_path="base")


def test_develop_straight_line_is_great_circle():
    frame = SphereFrame.at(SpherePoint(np.array([1.0, 0.0, 0.0])))
    angle = 1.2
    driving = np.tile([angle / 50, 0.0], (50, 1))
    path = develop(frame, driving)
    direction = frame.basis[:, 0]
    expected = np.cos(angle) * np.array([1.0, 0.0, 0.0]) + np.sin(angle) * direction
    np.testing.assert_allclose(path.base[-1], expected, atol=1e-12)
    assert path.terminal.orthonormality_error() < 1e-12


def test_develop_rejects_non_finite_driving():
    frame = SphereFrame.at(SpherePoint(np.array([1.0, 0.0, 0.0])))
    with pytest.raises(ValueError):
        develop(frame, np.array([[np.nan, 0.0]]))


def test_coordinate_projection_reads_base():
    frame = SphereFrame.at(SpherePoint(np.array([0.0, 1.0, 0.0])))
    path = develop(frame, np.full((5, 2), 0.1))
    np.testing.assert_array_equal(coordinate_projection_consistency(path, 1).values, path.base[:, 1])


def test_jacobi_stays_in_interval_and_decays():
    n, T, x0 = 3, 0.5, 0.8
    batch = BrownianBatch(TimeGrid(T, 200), 1, 20_000, seed=6)
    result = simulate_jacobi(n, ZeroPolicy(1), x0, batch)
    x = result["terminal"]
    assert np.all(np.abs(x) <= 1.0)
    assert "clamped" in result
    mean, se = moments(x, orders=(1,))[0]
    assert abs(mean - np.exp(-0.5 * n * T) * x0) < 5 * se + batch.grid.dt


def test_jacobi_rejects_start_outside():
    batch = BrownianBatch(TimeGrid(1.0, 4), 1, 4, seed=0)
    with pytest.raises(ValueError):
        simulate_jacobi(2, ZeroPolicy(1), 1.5, batch)


def test_non_finite_drift_aborts_paths():
    batch = BrownianBatch(TimeGrid(1.0, 4), 1, 50, seed=0)
    policy = FeedbackPolicy(1, lambda t, x: np.where(np.arange(x.shape[0])[:, None] < 5, np.nan, 0.0))
    result = simulate_controlled_euclidean(EuclideanModel.brownian(1), policy, [0.0], batch)
    assert result["aborted"].sum() == 5
    assert np.all(np.isfinite(result["terminal"]))
    with pytest.raises(PathAbortError):
        check_aborts(result["aborted"])


def test_few_aborts_only_warn():
    aborted = np.zeros(10_000, dtype=bool)
    aborted[0] = True
    check_aborts(aborted)


def test_moments_of_constant_samples():
    out = moments(np.full(10, 2.0), orders=(1, 3))
    assert out[0] == (2.0, 0.0)
    assert out[1] == (8.0, 0.0)
