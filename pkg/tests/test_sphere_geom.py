import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from cmcglue import sphere_geom as sg
from cmcglue.errors import AntipodalPoints, ChartPole, DegeneratePair
from conftest import random_tangent, random_unit


def test_exp_trivial():
    e0, e1 = sg.basis(4, 0), sg.basis(4, 1)
    assert_allclose(sg.exp_point(e0, np.zeros(4)), e0)
    assert_allclose(sg.exp_point(e0, np.pi / 2 * e1), e1, atol=1e-15)


def test_exp_unit_and_distance(rng):
    for _ in range(100):
        p = random_unit(rng, 5)
        v = random_tangent(rng, p, rng.uniform(0, np.pi) / 1.0)
        v *= rng.uniform(0, np.pi) / np.linalg.norm(v)
        q = sg.exp_point(p, v)
        assert abs(np.linalg.norm(q) - 1) < 1e-12
        assert abs(sg.dist(p, q) - np.linalg.norm(v)) < 1e-10


def test_log_trivial_and_antipodal():
    e0, e1 = sg.basis(3, 0), sg.basis(3, 1)
    assert_allclose(sg.log_point(e0, e0), 0.0)
    assert_allclose(sg.log_point(e0, e1), np.pi / 2 * e1, atol=1e-15)
    with pytest.raises(AntipodalPoints):
        sg.log_point(e0, -e0)


def test_exp_log_roundtrip(rng):
    for _ in range(100):
        p, q = random_unit(rng, 4), random_unit(rng, 4)
        v = sg.log_point(p, q)
        assert abs(np.dot(v, p)) < 1e-12
        assert_allclose(sg.exp_point(p, v), q, atol=1e-10)
        assert abs(np.linalg.norm(v) - np.arccos(np.clip(np.dot(p, q), -1, 1))) < 1e-7


def test_displacement_rotation(rng):
    p = random_unit(rng, 5)
    assert_allclose(sg.displacement_rotation(p, np.zeros(5)), np.eye(5))
    for _ in range(50):
        p = random_unit(rng, 5)
        s = random_tangent(rng, p, 0.3)
        r = sg.displacement_rotation(p, s)
        assert sg.is_orthogonal(r, 1e-12)
        assert abs(np.linalg.det(r) - 1) < 1e-12
        assert_allclose(r @ p, sg.exp_point(p, s), atol=1e-12)
        w = rng.standard_normal(5)
        q, _ = np.linalg.qr(np.column_stack([p, s]))
        w -= q @ (q.T @ w)
        assert_allclose(r @ w, w, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 10_000))
def test_displacement_one_parameter_group(t1, t2, seed):
    rng = np.random.default_rng(seed)
    p = random_unit(rng, 4)
    s = random_tangent(rng, p)
    s /= np.linalg.norm(s)
    r1 = sg.displacement_rotation(p, t1 * s)
    r2 = sg.displacement_rotation(p, t2 * s)
    assert_allclose(r1 @ r2, sg.displacement_rotation(p, (t1 + t2) * s), atol=1e-10)


def test_stereo_center_and_factor():
    chart = sg.StereoChart.standard(4)
    assert_allclose(sg.stereo_forward(chart, sg.basis(4, 0)), 0.0)
    assert sg.conformal_factor(np.zeros(3)) == 0.5
    assert sg.conformal_factor(np.array([0.0, 1.0, 0.0])) == 1.0
    with pytest.raises(ChartPole):
        sg.stereo_forward(chart, -sg.basis(4, 0))


def test_stereo_roundtrip(rng):
    r, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    chart = sg.StereoChart(r)
    for _ in range(50):
        x = random_unit(rng, 5)
        assert_allclose(sg.stereo_inverse(chart, sg.stereo_forward(chart, x)), x, atol=1e-10)


def _pullback_metric(chart, y, h=1e-6):
    dim = y.size
    jac = np.empty((dim + 1, dim))
    for k in range(dim):
        dy = np.zeros(dim)
        dy[k] = h
        jac[:, k] = (sg.stereo_inverse(chart, y + dy) - sg.stereo_inverse(chart, y - dy)) / (2 * h)
    return jac.T @ jac


def test_pullback_metric_conformal(rng):
    chart = sg.StereoChart.standard(4)
    assert_allclose(_pullback_metric(chart, np.zeros(3)), 4 * np.eye(3), atol=1e-8)
    for _ in range(20):
        y = rng.uniform(-2, 2, 3)
        g = _pullback_metric(chart, y) * sg.conformal_factor(y) ** 2
        assert_allclose(g, np.eye(3), atol=1e-6)


def test_geodesic_sphere_maps_to_sphere(rng):
    # points at fixed distance from a centre map to a Euclidean sphere
    chart = sg.StereoChart.standard(4)
    c = random_unit(rng, 4)
    if c[0] < 0:
        c = -c
    pts = []
    for _ in range(200):
        v = random_tangent(rng, c)
        pts.append(sg.exp_point(c, 0.4 * v / np.linalg.norm(v)))
    y = sg.stereo_forward(chart, np.array(pts))
    a = np.column_stack([2 * y, np.ones(len(y))])
    sol, *_ = np.linalg.lstsq(a, np.sum(y * y, axis=1), rcond=None)
    ctr = sol[:3]
    rad = np.sqrt(sol[3] + ctr @ ctr)
    assert np.max(np.abs(np.linalg.norm(y - ctr, axis=1) - rad)) < 1e-9


def test_pair_frame_identity():
    h = 0.3
    p = np.array([np.cos(h), -np.sin(h), 0, 0])
    q = np.array([np.cos(h), np.sin(h), 0, 0])
    chart, tau = sg.canonical_pair_frame(p, q, 0.1)
    assert_allclose(chart.frame, np.eye(4), atol=1e-15)
    assert abs(tau - (0.6 - 0.2)) < 1e-14


def test_pair_frame_images(rng):
    for _ in range(100):
        p = random_unit(rng, 5)
        q = random_unit(rng, 5)
        alpha = 0.2
        chart, tau = sg.canonical_pair_frame(p, q, alpha)
        r = chart.frame
        assert sg.is_orthogonal(r, 1e-12)
        assert abs(np.linalg.det(r) - 1) < 1e-12
        h = alpha + tau / 2
        assert_allclose(r @ p, [np.cos(h), -np.sin(h), 0, 0, 0], atol=1e-12)
        assert_allclose(r @ q, [np.cos(h), np.sin(h), 0, 0, 0], atol=1e-12)
        assert_allclose(r @ sg.unit(p + q), sg.basis(5, 0), atol=1e-12)


def test_pair_frame_degenerate():
    e0 = sg.basis(3, 0)
    with pytest.raises(DegeneratePair):
        sg.canonical_pair_frame(e0, e0, 0.1)
    with pytest.raises(DegeneratePair):
        sg.canonical_pair_frame(e0, -e0, 0.1)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_pair_image_spheres(rng, n):
    alpha, tau = 0.3, 0.1
    h = alpha + tau / 2
    dim = n + 2
    p = np.zeros(dim)
    q = np.zeros(dim)
    p[:2] = [np.cos(h), -np.sin(h)]
    q[:2] = [np.cos(h), np.sin(h)]
    r0 = sg.coordinate_rotation(dim, 2, 3, 0.7) @ sg.coordinate_rotation(dim, 0, 2, 0.4)
    chart, _ = sg.canonical_pair_frame(r0 @ p, r0 @ q, alpha)
    rad, d = sg.image_sphere(alpha, tau)
    for centre, sign in ((r0 @ p, +1), (r0 @ q, -1)):
        for _ in range(200):
            v = random_tangent(rng, centre)
            x = sg.exp_point(centre, alpha * v / np.linalg.norm(v))
            y = sg.stereo_forward(chart, x)
            assert abs((y[0] + sign * d) ** 2 + y[1:] @ y[1:] - rad ** 2) < 1e-10
