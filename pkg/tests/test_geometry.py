import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from engine.geometry import (
    SphereFrame,
    SpherePoint,
    coordinate_gradient,
    develop_step,
    frame_theta,
    parallel_transport,
    project_tangent,
    sphere_exp,
    theta_energy_ratio,
)

finite = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False)


def vectors(d):
    return arrays(np.float64, (d,), elements=finite)


@st.composite
def point_and_tangent(draw, d=4):
    x = draw(vectors(d))
    v = draw(vectors(d))
    assume(np.linalg.norm(x) > 1e-3)
    p = SpherePoint.from_vector(x)
    return p, project_tangent(p, v)


@given(point_and_tangent())
@settings(max_examples=200, deadline=None)
def test_exp_stays_on_sphere(pv):
    x, v = pv
    assert sphere_exp(x, v).norm_error() < 1e-12


def test_exp_of_zero_is_identity():
    x = SpherePoint.from_vector([1.0, 2.0, 2.0])
    np.testing.assert_array_equal(sphere_exp(x, np.zeros(3)).coords, x.coords)


def test_exp_quarter_turn():
    x = SpherePoint(np.array([1.0, 0.0, 0.0]))
    y = sphere_exp(x, np.array([0.0, np.pi / 2, 0.0]))
    np.testing.assert_allclose(y.coords, [0.0, 1.0, 0.0], atol=1e-15)


@given(point_and_tangent())
@settings(max_examples=200, deadline=None)
def test_transport_of_velocity_is_geodesic_velocity(pv):
    x, v = pv
    r = float(v.norm())
    assume(r > 1e-6)
    moved = parallel_transport(x, v, v)
    u = v.vec / r
    expected = r * (-np.sin(r) * x.coords + np.cos(r) * u)
    np.testing.assert_allclose(moved.vec, expected, atol=1e-10)
    assert moved.radial_error() < 1e-10


@given(arrays(np.float64, (4,), elements=finite), arrays(np.float64, (3,), elements=finite))
@settings(max_examples=200, deadline=None)
def test_develop_step_keeps_orthonormal_frame(x, xi):
    assume(np.linalg.norm(x) > 1e-3)
    frame = SphereFrame.at(SpherePoint.from_vector(x))
    moved = develop_step(frame, xi)
    assert moved.orthonormality_error() < 1e-10
    assert moved.base.norm_error() < 1e-12


def test_push_pull_are_adjoint():
    frame = SphereFrame.at(SpherePoint.from_vector([0.3, -1.0, 0.5]))
    xi = np.array([0.7, -0.2])
    np.testing.assert_allclose(frame.pull(frame.push(xi)), xi, atol=1e-14)


def test_frame_shape_is_checked():
    with pytest.raises(ValueError):
        SphereFrame(SpherePoint(np.array([1.0, 0.0, 0.0])), np.zeros((3, 3)))


def test_coordinate_gradient_is_tangent():
    x = SpherePoint.from_vector([0.2, -0.4, 0.9, 0.1])
    for i in range(4):
        assert coordinate_gradient(x, i).radial_error() < 1e-15


def test_coordinate_gradient_rejects_bad_index():
    with pytest.raises(ValueError):
        coordinate_gradient(SpherePoint(np.array([1.0, 0.0])), 2)


@given(point_and_tangent(d=5), st.integers(min_value=0, max_value=4))
@settings(max_examples=100, deadline=None)
def test_coordinate_gradient_norm(pv, i):
    x, _ = pv
    grad = coordinate_gradient(x, i).vec
    assert np.sum(grad ** 2) == pytest.approx(1.0 - x.coords[i] ** 2, abs=1e-12)


@given(point_and_tangent(d=5))
@settings(max_examples=300, deadline=None)
def test_theta_energy_ratio_at_most_two(pv):
    x, y = pv
    assume(float(y.norm()) > 1e-6)
    fallback = SphereFrame.at(x).column(0)
    assert theta_energy_ratio(x, y, fallback) <= 2.0 + 1e-10


def test_theta_falls_back_at_pole():
    x = SpherePoint(np.array([1.0, 0.0, 0.0]))
    fallback = SphereFrame.at(x).column(0)
    thetas = frame_theta(x, fallback)
    np.testing.assert_array_equal(thetas[0].vec, fallback.vec)
    np.testing.assert_allclose(thetas[1].vec, [0.0, 1.0, 0.0])
