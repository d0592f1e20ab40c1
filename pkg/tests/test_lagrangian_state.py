import numpy as np
import pytest

from splashsim.conformal_geometry import ConformalChart
from splashsim.lagrangian_state import (
    Mesh,
    TrajectoryState,
    annular_sector_mesh,
    cofactor,
    det2,
    divergence,
    gradient,
    hessian,
    inv2,
    lagrangian_laplacian,
    laplacian,
    mesh_from_template,
    rectangle_mesh,
    residual_detG,
    residual_incompressibility,
    residual_traction,
    spatial_velocity_gradient,
    stress,
    zeta,
)

IDENTITY = ConformalChart(kind="identity")


@pytest.fixture(scope="module")
def sector():
    return annular_sector_mesh(14, 20, 1.0, 2.0, 0.4 * np.pi, end_clustering=1.0)


def test_linear_fields_differentiated_exactly(sector):
    x, y = sector.points.T
    f = 2.0 * x - 3.0 * y + 0.5
    g = gradient(f, sector)
    assert np.allclose(g, [2.0, -3.0], atol=1e-11)
    v = np.c_[x + 2 * y, 3 * x - y]
    assert np.allclose(divergence(v, sector), 0.0, atol=1e-11)


def test_quadratics_exact_on_rectangle():
    m = rectangle_mesh(9, 7, 2.0, 1.0)
    x, y = m.points.T
    f = x**2 + 3 * x * y - y**2
    assert np.allclose(laplacian(f, m), 0.0, atol=1e-10)
    H = hessian(f, m)
    assert np.allclose(H[:, 0, 1], 3.0, atol=1e-10)


def test_curvilinear_laplacian_second_order():
    errs = []
    for n in (17, 33):
        m = annular_sector_mesh(n, n, 1.0, 2.0, 0.4 * np.pi)
        x, y = m.points.T
        errs.append(np.abs(laplacian(np.sin(x) * np.cos(y), m) + 2 * np.sin(x) * np.cos(y)).max())
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_small_matrix_helpers(rng):
    A = rng.standard_normal((10, 2, 2)) + 3 * np.eye(2)
    assert np.allclose(det2(A), np.linalg.det(A))
    assert np.allclose(inv2(A), np.linalg.inv(A))
    # cof(A) = det(A) A^{-T}
    assert np.allclose(cofactor(A), det2(A)[:, None, None] * np.linalg.inv(A).transpose(0, 2, 1))
    assert np.allclose(residual_detG(np.broadcast_to(np.eye(2), (3, 2, 2))), 0.0)


def test_boundary_loop_rectangle():
    m = rectangle_mesh(5, 4)
    assert m.Nb == 2 * (5 + 4) - 4
    assert m.is_corner.sum() == 4
    assert m.boundary_curve().signed_area > 0
    pts = m.points[m.boundary]
    edge = ~m.is_corner
    # outward normals: on x = 0 they point to -x, on y = 1 to +y, ...
    left = edge & np.isclose(pts[:, 0], 0.0)
    top = edge & np.isclose(pts[:, 1], 1.0)
    assert np.allclose(m.boundary_normals[left], [-1.0, 0.0])
    assert np.allclose(m.boundary_normals[top], [0.0, 1.0])
    assert np.allclose(np.abs(np.einsum("ni,ni->n", m.boundary_normals, m.boundary_tangents)), 0.0)


def test_integration_weights(sector):
    area = 0.5 * (2.0**2 - 1.0**2) * 0.8 * np.pi
    assert sector.integrate(np.ones(sector.N)) == pytest.approx(area, rel=1e-2)
    assert sector.integrate_boundary(np.ones(sector.Nb)) == pytest.approx(sector.boundary_curve().perimeter)


def test_zeta_at_labels_is_identity(sector):
    assert np.allclose(zeta(sector.points, sector), np.eye(2), atol=1e-11)


def test_rotation_is_incompressible_and_stress_free(sector):
    x, y = sector.points.T
    v = np.c_[-y, x]
    X = sector.points
    assert np.allclose(residual_incompressibility(v, X, sector, IDENTITY), 0.0, atol=1e-10)
    S = spatial_velocity_gradient(v, X, sector, IDENTITY)
    assert np.allclose(S + np.swapaxes(S, 1, 2), 0.0, atol=1e-10)
    G = np.broadcast_to(np.eye(2), (sector.N, 2, 2)).copy()
    assert np.allclose(residual_traction(v, np.zeros(sector.N), G, X, sector, IDENTITY), 0.0, atol=1e-10)


def test_pressure_traction_is_normal(sector):
    G = np.broadcast_to(np.eye(2), (sector.N, 2, 2)).copy()
    q = np.full(sector.N, 2.0)
    sig = stress(np.zeros((sector.N, 2)), q, G, sector.points, sector, IDENTITY)
    assert np.allclose(sig, -2.0 * np.eye(2))
    t = residual_traction(np.zeros((sector.N, 2)), q, G, sector.points, sector, IDENTITY)
    assert np.allclose(t, -2.0 * sector.boundary_normals, atol=1e-10)


def test_lagrangian_laplacian_at_labels(sector):
    x, y = sector.points.T
    v = np.c_[np.sin(x) * y, x * x]
    assert np.allclose(lagrangian_laplacian(v, sector.points, sector), laplacian(v, sector), atol=1e-10)


def test_lagrangian_laplacian_under_affine_flow():
    # X = A alpha maps a quadratic in x back to a quadratic in alpha; Lap_x is then exact
    m = rectangle_mesh(9, 9)
    A = np.array([[1.2, 0.3], [0.0, 1 / 1.2]])
    X = m.points @ A.T
    f = (X**2).sum(1)  # |x|^2, Laplacian 4
    assert np.allclose(lagrangian_laplacian(f, X, m), 4.0, atol=1e-9)


def test_trajectory_shape_checks(tmp_path):
    m = rectangle_mesh(4, 4)
    t = np.linspace(0, 1, 3)
    X = np.broadcast_to(m.points, (3, m.N, 2)).copy()
    v = np.zeros((3, m.N, 2))
    q = np.zeros((3, m.N))
    G = np.broadcast_to(np.eye(2), (3, m.N, 2, 2)).copy()
    st = TrajectoryState(t, X, v, q, G)
    assert st.dt == pytest.approx(0.5)
    assert st.min_det_gradX(m) == pytest.approx(1.0)
    st.write_snapshot_csv(tmp_path / "s.csv", 1, m)
    rows = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert rows.shape == (m.N, 12)
    with pytest.raises(ValueError):
        TrajectoryState(t, X[:2], v, q, G)
    bad = v.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        TrajectoryState(t, X, bad, q, G)


def test_templates_and_degenerate_grids():
    m = mesh_from_template({"name": "rectangle", "n1": 4, "n2": 5})
    assert m.shape == (4, 5)
    with pytest.raises(ValueError):
        mesh_from_template({"name": "disc"})
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 3, 2)))


def test_end_clustering_refines_ends():
    m = annular_sector_mesh(4, 33, 1.0, 2.0, 0.4 * np.pi, end_clustering=1.5)
    th = np.arctan2(m.points[:, 1], m.points[:, 0]).reshape(4, 33)[0]
    d = np.diff(th)
    assert d[0] < d[16] / 3
    assert np.allclose(d, d[::-1])
