import numpy as np
import pytest

from splashsim.lagrangian_state import rectangle_mesh
from splashsim.norms_diagnostics import (
    AxisExtension,
    NormConfig,
    NormPlan,
    composite_norm,
    embedding_pairs,
    embedding_ratio,
    reflection_coefficients,
    sobolev_Hs,
    spacetime_Ks,
    torus_Hs,
    weighted_F_norm,
)


def test_norm_config_ranges():
    NormConfig(s=2.25, gamma=1.1)
    with pytest.raises(ValueError):
        NormConfig(s=2.6)
    with pytest.raises(ValueError):
        NormConfig(s=2.25, gamma=1.3)


@pytest.mark.parametrize("order", [0, 1, 3])
def test_reflection_matches_polynomials(order):
    c = reflection_coefficients(order)
    j = np.arange(1, order + 2)
    for m in range(order + 1):
        assert np.dot(c, j**m) == pytest.approx((-1.0) ** m, abs=1e-10)


def test_extension_keeps_samples_and_continues_linears():
    ext = AxisExtension(33, pad=4, order=2)
    x = np.linspace(0, 1, 33)
    out = ext.apply(x[None, :], axis=1)[0]
    assert out.size == ext.size
    assert np.array_equal(out[4:-4], x)
    # the pad value one step out is a tapered linear continuation
    h = x[1] - x[0]
    assert out[3] == pytest.approx(-h * ext.taper[0], rel=1e-10)


@pytest.mark.parametrize("s", [0.0, 1.0, 2.25])
def test_single_mode_on_unit_torus(s):
    # one mode with |k|^2 = 1 after scaling lengths to 2 pi
    n = 32
    x = np.arange(n) * 2 * np.pi / n
    f = np.sqrt(2) * np.cos(x)[:, None] * np.ones(n)[None, :]
    assert torus_Hs(f, 2 * np.pi, s) == pytest.approx(2 ** (s / 2), rel=1e-12)


def test_torus_l2_is_parseval(rng):
    f = rng.standard_normal((16, 12))
    assert torus_Hs(f, 1.0, 0.0) == pytest.approx(np.sqrt(np.mean(f**2)), rel=1e-12)


@pytest.fixture(scope="module")
def plan():
    mesh = rectangle_mesh(17, 17, 1.0, 1.0)
    return NormPlan(mesh, np.linspace(0, 0.1, 9))


def _field(mesh, a=1.0, b=2.0):
    x, y = mesh.points.T
    return np.sin(a * x + 0.3) * np.cos(b * y)


def test_spatial_norm_is_a_norm(plan):
    f, g = _field(plan.mesh), _field(plan.mesh, 2.0, 1.0)
    n = lambda u: sobolev_Hs(u, 2.25, plan.mesh, plan)  # noqa: E731
    assert n(-3.5 * f) == pytest.approx(3.5 * n(f), rel=1e-10)
    assert n(f + g) <= n(f) + n(g) + 1e-10
    assert n(0 * f) == 0.0


def test_spatial_norm_grows_with_s(plan):
    f = _field(plan.mesh, 3.0, 2.0)
    vals = [sobolev_Hs(f, s, plan.mesh, plan) for s in (0.0, 1.0, 2.0, 2.25)]
    assert np.all(np.diff(vals) > 0)


def test_spatial_l2_matches_quadrature(plan):
    f = _field(plan.mesh)
    l2 = np.sqrt(plan.mesh.integrate(f**2))
    assert sobolev_Hs(f, 0.0, plan.mesh, plan) == pytest.approx(l2, rel=1e-10)


def test_spacetime_norms_homogeneous_and_subadditive(plan):
    t = plan.times[:, None]
    a = np.sin(3 * t) * _field(plan.mesh)
    b = t**2 * _field(plan.mesh, 2.0, 1.0)
    for fn in (lambda u: spacetime_Ks(u, 2.25, plan), lambda u: weighted_F_norm(u, 2.25, 1.1, plan)):
        assert fn(2.0 * a) == pytest.approx(2.0 * fn(a), rel=1e-10)
        assert fn(a + b) <= fn(a) + fn(b) + 1e-10


def test_composite_of_zero_vanishes(plan):
    K, N = len(plan.times), plan.mesh.N
    parts = composite_norm(np.zeros((K, N, 2)), np.zeros((K, N)), np.zeros((K, N, 2)), np.zeros((K, N, 2, 2)), plan)
    assert set(parts) == {"v", "q", "X", "G", "total"}
    assert parts["total"] == 0.0


def test_embedding_pairs_and_ratios(plan):
    pairs = embedding_pairs(2.25)
    assert sorted(pairs) == [f"E{i}" for i in range(1, 7)]
    assert pairs["E5"] == (1.0, 1.25)
    t = plan.times[:, None]
    corpus = [t * _field(plan.mesh), np.zeros((len(plan.times), plan.mesh.N))]
    ratios = embedding_ratio(corpus, "E1", plan)
    assert len(ratios) == 1 and 0 < ratios[0] < np.inf
