import numpy as np
import pytest
from scipy import stats

from engine.geometry import SphereFrame, SpherePoint
from engine.inequalities import (
    BLInstance,
    BLReport,
    bl_finite_horizon,
    bl_l1_rhs,
    bl_lhs,
    bl_rhs,
    bl_verify,
    coordinate_control_bound,
    drift_coordinate_decomposition,
    frame_lemma_ratios,
    sample_uniform_sphere,
)
from engine.simulate import simulate_horizontal
from engine.spectral import ZonalFunction
from engine.stochastics import BrownianBatch, DriftRealization, PiecewisePolicy, TimeGrid


@pytest.mark.parametrize("n", [2, 3, 5])
def test_uniform_samples_have_nu_marginal(n):
    points = sample_uniform_sphere(n, 20_000, seed=1)
    assert points.norm_error() < 1e-12
    ks = stats.kstest(points.coords[:, -1], lambda t: stats.beta.cdf(0.5 * (t + 1.0), 0.5 * n, 0.5 * n))
    assert ks.pvalue > 1e-3


def test_constants_give_equality():
    report = bl_verify(BLInstance.constant(3, 2.0), 1000, seed=0)
    assert report.lhs == pytest.approx(16.0)
    assert report.ratio == pytest.approx(1.0, abs=1e-12)
    assert report.lhs_stderr == 0.0


def test_instance_validation():
    with pytest.raises(ValueError):
        BLInstance(2, [ZonalFunction.constant(1.0)] * 2)
    with pytest.raises(ValueError):
        BLInstance(2, [ZonalFunction.linear(1.0)] * 3)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_random_tilts_satisfy_inequality(n):
    for k in range(10):
        report = bl_verify(BLInstance.random_tilts(n, seed=4, index=k), 20_000, seed=k)
        assert report.passed, f"instance {k}: ratio {report.ratio}"


def test_lhs_is_reproducible_across_seeds():
    instance = BLInstance.tilts(2, [1.0, -1.0, 0.5])
    a, a_se = bl_lhs(instance, 50_000, seed=1)
    b, b_se = bl_lhs(instance, 50_000, seed=2)
    assert abs(a - b) < 5 * np.hypot(a_se, b_se)


def test_concentrated_instance_breaks_l1_only():
    instance = BLInstance.concentrated()
    report = bl_verify(instance, 100_000, seed=3)
    assert report.passed
    assert report.l1_violated
    assert bl_l1_rhs(instance) < report.lhs < bl_rhs(instance)


def test_finite_horizon_bound():
    instance = BLInstance.tilts(2, [1.0, -0.5, 0.5])
    batch = BrownianBatch(TimeGrid(1.0, 100), 2, 10_000, seed=5)
    report = bl_finite_horizon(instance, np.array([0.0, 0.6, 0.8]), batch)
    assert report.passed


@pytest.mark.parametrize("n", [2, 3, 10])
def test_frame_lemma(n):
    ratios = frame_lemma_ratios(n, 20_000, seed=n)
    assert np.all(ratios <= 2.0 + 1e-10)
    assert np.all(ratios >= 0.0)


def test_decomposition_of_piecewise_control():
    n = 2
    grid = TimeGrid(1.0, 40)
    policy = PiecewisePolicy(n, 1.0, 4, 1.5, seed=2)
    frame0 = SphereFrame.at(SpherePoint(np.array([1.0, 0.0, 0.0])))

    def summarize(block):
        drifts = drift_coordinate_decomposition(block.path, DriftRealization(block.grid, block.rates))
        return {"holds": drifts.bound_holds, "energy": drifts.energy,
                "realized": drifts.realization(0).energy, "first": drifts.coordinate_energy[0],
                "aborted": block.aborted}

    result = simulate_horizontal(frame0, policy, BrownianBatch(grid, n, 200, seed=1), summarize,
                                 keep_path=True, keep_rates=True)
    assert np.all(result["holds"])
    np.testing.assert_allclose(result["realized"], result["first"], rtol=1e-12)
    # open loop: every path carries the same energy
    np.testing.assert_allclose(result["energy"], result["energy"][0], rtol=1e-12)
    assert result["energy"][0] <= 0.5 * np.max(np.sum(policy.levels ** 2, axis=1)) + 1e-12


def test_decomposition_needs_frames():
    grid = TimeGrid(1.0, 4)
    frame0 = SphereFrame.at(SpherePoint(np.array([1.0, 0.0, 0.0])))

    def summarize(block):
        with pytest.raises(ValueError):
            drift_coordinate_decomposition(block.path, DriftRealization(block.grid, block.rates))
        return {"aborted": block.aborted}

    simulate_horizontal(frame0, PiecewisePolicy(2, 1.0, 2, 1.0, seed=0), BrownianBatch(grid, 2, 5, seed=0),
                        summarize, keep_path="base", keep_rates=True)


def test_coordinate_control_bound():
    x0 = np.array([0.0, 1.0, 0.0])
    policy = PiecewisePolicy(2, 1.0, 4, 1.0, seed=3)
    profiles = [ZonalFunction.linear(0.5)] * 3
    rows, holds = coordinate_control_bound(profiles, x0, policy, BrownianBatch(TimeGrid(1.0, 50), 2, 2000, seed=4))
    assert holds
    assert len(rows) == 3
    for row in rows:
        assert row.holds(4.0)


def test_report_slack_is_absolute():
    report = BLReport(lhs=10.25, lhs_stderr=0.1, rhs=10.0, l1_rhs=1.0, multiplier=3.0)
    assert report.slack == pytest.approx(0.3)
    assert report.passed
    assert not BLReport(lhs=10.35, lhs_stderr=0.1, rhs=10.0, l1_rhs=1.0, multiplier=3.0).passed
