import json

import numpy as np
import pytest

from splashsim.conformal_geometry import (
    BranchCutError,
    ConformalChart,
    CurveError,
    PlanarCurve,
    Shift,
    SingularChartError,
    apply_JP,
    apply_P,
    apply_P_inv,
    discrete_curvature,
    hausdorff_distance,
    jacobian_JP,
    jacobian_JP_inv,
    metric_Q2,
    min_gap,
    pullback_curve,
    self_intersect,
    shift_curve,
    transformed_normal,
)
from splashsim.lagrangian_state import det2


def circle(n, r=1.0, center=(0.0, 0.0)):
    t = 2 * np.pi * np.arange(n) / n
    return np.c_[center[0] + r * np.cos(t), center[1] + r * np.sin(t)]


def off_cut_points(rng, chart, n=500):
    z = rng.uniform(-3, 3, size=(3 * n, 2))
    return z[chart.distance_to_cut(z) > 1e-3][:n]


@pytest.mark.parametrize("angle", [np.pi, 0.5 * np.pi, -0.3])
def test_round_trip_off_cut(rng, angle):
    chart = ConformalChart(branch_cut_angle=angle, center=(0.3, -0.2))
    z = off_cut_points(rng, chart)
    assert np.abs(apply_P_inv(apply_P(z, chart), chart) - z).max() < 1e-12


def test_image_is_one_half_plane(rng):
    angle = 0.7
    chart = ConformalChart(branch_cut_angle=angle)
    w = apply_P(off_cut_points(rng, chart), chart)
    # the branch with the cut at `angle` has arguments in ((angle - 2 pi) / 2, angle / 2)
    arg = np.angle(w[:, 0] + 1j * w[:, 1])
    lo, hi = (angle - 2 * np.pi) / 2, angle / 2
    wrapped = np.mod(arg - lo, 2 * np.pi) + lo
    assert np.all((wrapped > lo) & (wrapped < hi))


def test_points_on_cut_rejected():
    chart = ConformalChart()
    with pytest.raises(BranchCutError):
        apply_P(np.array([[-1.0, 0.0]]), chart)


def test_origin_rejected_by_jacobian():
    with pytest.raises(SingularChartError):
        jacobian_JP(np.zeros((1, 2)), ConformalChart())


def test_jacobian_against_differences_of_inverse(rng):
    # J^P at x~ inverts the derivative of the squaring map, differentiated numerically here
    chart = ConformalChart()
    xt = rng.uniform(0.3, 2.0, size=(50, 2))
    h = 1e-6
    cols = [(apply_P_inv(xt + h * e, chart) - apply_P_inv(xt - h * e, chart)) / (2 * h) for e in np.eye(2)]
    Jinv_fd = np.stack(cols, axis=-1)
    assert np.allclose(jacobian_JP_inv(xt, chart), Jinv_fd, atol=1e-7)
    prod = np.einsum("nij,njk->nik", jacobian_JP(xt, chart), jacobian_JP_inv(xt, chart))
    assert np.allclose(prod, np.eye(2), atol=1e-13)


def test_metric_is_det_and_closed_form(rng):
    chart = ConformalChart()
    xt = rng.uniform(0.3, 2.0, size=(50, 2))
    Q2 = metric_Q2(xt, chart)
    assert np.allclose(Q2, det2(jacobian_JP(xt, chart)), rtol=1e-13)
    assert np.allclose(Q2, 1.0 / (4.0 * (xt**2).sum(1)), rtol=1e-13)


def test_identity_chart():
    chart = ConformalChart(kind="identity")
    x = np.array([[0.0, 0.0], [1.0, -2.0]])
    assert np.array_equal(apply_P(x, chart), x)
    assert np.array_equal(jacobian_JP(x, chart), np.broadcast_to(np.eye(2), (2, 2, 2)))
    assert np.array_equal(metric_Q2(x, chart), np.ones(2))


def test_apply_JP_and_normal_transform(rng):
    chart = ConformalChart()
    xt = rng.uniform(0.3, 2.0, size=(20, 2))
    vec = rng.standard_normal((20, 2))
    J = jacobian_JP(xt, chart)
    assert np.allclose(apply_JP(xt, vec, chart), np.einsum("nij,nj->ni", J, vec))
    assert np.allclose(transformed_normal(vec, xt, chart), np.einsum("nij,nj->ni", J, vec))


def test_unknown_chart_kind():
    with pytest.raises(ValueError):
        ConformalChart(kind="log")


# ---- curves


def test_curve_orientation_and_simplicity():
    PlanarCurve(circle(12))
    with pytest.raises(CurveError):
        PlanarCurve(circle(12)[::-1])
    eight = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(CurveError):
        PlanarCurve(eight)
    PlanarCurve(eight, diagnostic=True)
    with pytest.raises(CurveError):
        PlanarCurve(np.array([[0, 0], [0, 0], [1, 0], [0, 1]], dtype=float))


def test_self_intersection_point():
    eight = PlanarCurve(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float), diagnostic=True)
    hit = self_intersect(eight)
    assert hit is not None
    assert np.allclose(hit.point, [0.5, 0.5])
    assert self_intersect(PlanarCurve(circle(20))) is None


def slot(L=4.0, w=0.1, n=100):
    """Thin rectangle traversed counterclockwise, sides sampled with n nodes."""
    x = np.linspace(0, L, n, endpoint=False)
    y = np.linspace(0, w, 4, endpoint=False)
    return np.concatenate([np.c_[x, 0 * x], np.c_[L + 0 * y, y], np.c_[L - x, w + 0 * x], np.c_[0 * y, w - y]])


def test_min_gap_of_slot():
    assert min_gap(PlanarCurve(slot(w=0.1))) == pytest.approx(0.1, rel=1e-12)
    assert min_gap(PlanarCurve(slot(w=0.02))) == pytest.approx(0.02, rel=1e-12)


def test_min_gap_zero_when_crossing():
    nodes = slot(w=0.1)
    nodes[150, 1] = -0.05  # push one top node through the bottom side
    assert min_gap(PlanarCurve(nodes, diagnostic=True)) == 0.0


def test_min_gap_circle_is_diameter_scale():
    g = min_gap(PlanarCurve(circle(200, r=2.0)))
    assert 0.0 < g <= 4.0


def test_hausdorff_of_translate_equals_shift():
    c = PlanarCurve(circle(64))
    shifted = shift_curve(c, Shift(0.03, (1.0, 1.0)))
    assert hausdorff_distance(c, shifted) == pytest.approx(0.03, rel=1e-12)
    assert hausdorff_distance(c, c) == 0.0


def test_shift_normalizes_direction():
    assert np.allclose(Shift(2.0, (3.0, 4.0)).vector, [1.2, 1.6])
    with pytest.raises(ValueError):
        Shift(1.0, (0.0, 0.0))


def test_discrete_curvature_of_circle():
    k = discrete_curvature(PlanarCurve(circle(400, r=2.0)))
    assert np.allclose(k, 0.5, rtol=1e-4)


def test_pullback_is_diagnostic_and_squares():
    chart = ConformalChart()
    c = PlanarCurve(circle(32, r=0.5, center=(1.0, 0.0)))
    pb = pullback_curve(c, chart)
    assert pb.diagnostic
    assert np.allclose(pb.nodes, apply_P_inv(c.nodes, chart))


def test_curve_io_round_trip(tmp_path):
    c = PlanarCurve(circle(10))
    c.to_csv(tmp_path / "c.csv")
    assert np.allclose(PlanarCurve.from_csv(tmp_path / "c.csv").nodes, c.nodes, rtol=0, atol=1e-15)
    assert np.array_equal(PlanarCurve.from_json(json.dumps(c.to_json())).nodes, c.nodes)
