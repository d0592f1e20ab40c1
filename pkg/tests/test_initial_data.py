import numpy as np
import pytest

from splashsim.conformal_geometry import ConformalChart
from splashsim.initial_data import (
    CircleArcFrame,
    F0Template,
    InitialDataError,
    LineFrame,
    StreamArc,
    TubeCutoff,
    build_stream_function,
    check_compatibility,
    frame_stress_term,
    polynomial_bump,
    rest_data,
    smooth_step,
    smooth_step_derivative,
    stream_velocity_at,
    validate_F0,
)
from splashsim.lagrangian_state import annular_sector_mesh, det2

TEMPLATES = [
    F0Template("identity"),
    F0Template("shear", {"c": 0.3}),
    F0Template("stretch", {"a": 1.5}),
    F0Template("twist", {"center": [0.5, 0.5], "radius": 0.8, "amplitude": 0.3}),
]


def divergence_fd(fn, x, h=1e-5):
    """Central-difference divergence of a vector field, or column divergence of a matrix field."""
    out = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        out = out + (fn(x + e)[..., i] - fn(x - e)[..., i]) / (2 * h)
    return out


@pytest.mark.parametrize("F0", TEMPLATES, ids=lambda f: f.name)
def test_templates_unimodular_and_divergence_free(F0, rng):
    x = rng.uniform(-0.5, 1.5, size=(200, 2))
    assert np.allclose(det2(F0(x)), 1.0, atol=1e-12)
    # column j of F is the vector (F_0j, F_1j); its divergence is sum_i d_i F_ij
    div = divergence_fd(lambda p: np.swapaxes(F0(p), -1, -2), x)
    assert np.abs(div).max() < 1e-7
    validate_F0(F0, x)


def test_non_unimodular_rejected():
    with pytest.raises(InitialDataError, match="det"):
        validate_F0(F0Template("constant", {"matrix": [[2.0, 0.0], [0.0, 1.0]]}), np.zeros((3, 2)))
    with pytest.raises(InitialDataError):
        F0Template("bogus")(np.zeros((1, 2)))


@pytest.mark.parametrize("F0", [TEMPLATES[1], TEMPLATES[2], F0Template("constant", {"matrix": [[1.0, 0.5], [0.2, 1.1]]})], ids=["shear", "stretch", "constant"])
def test_background_strain_makes_stress_isotropic(F0):
    F = F0(np.zeros((1, 2)))[0]
    if not np.isclose(np.linalg.det(F), 1.0):
        F = F / np.sqrt(np.linalg.det(F))
        F0 = F0Template("constant", {"matrix": F.tolist()})
    B = F0.background
    M = F @ F.T - np.eye(2) + 2 * B
    assert np.isclose(np.trace(B), 0.0)
    assert np.allclose(B, B.T)
    assert np.allclose(M, 0.5 * np.trace(M) * np.eye(2))
    assert F0Template("identity").background is None


def test_smooth_step_and_cutoff():
    x = np.linspace(-0.5, 1.5, 401)
    y = smooth_step(x)
    assert y[0] == 0.0 and y[-1] == 1.0 and np.all(np.diff(y) >= 0)
    h = 1e-6
    mid = x[(x > 0.05) & (x < 0.95)]
    assert np.allclose(smooth_step_derivative(mid), (smooth_step(mid + h) - smooth_step(mid - h)) / (2 * h), atol=1e-7)
    cut = TubeCutoff(2.0, 0.4)
    lam = np.linspace(-2.5, 0.6, 301)
    assert np.all(cut.value(lam[(lam > -1.0) & (lam < 0.2)]) == 1.0)
    assert np.all(cut.value(lam[(lam < -2.0) | (lam > 0.4)]) == 0.0)
    inner = lam[(lam > -1.95) & (lam < 0.35)]
    fd = (cut.value(inner + h) - cut.value(inner - h)) / (2 * h)
    assert np.allclose(cut.derivative(inner), fd, atol=1e-6)


def test_polynomial_bump():
    x = np.linspace(-0.2, 1.2, 141)
    b = polynomial_bump(x)
    assert b.max() == pytest.approx(1.0)
    assert np.all(b[(x <= 0) | (x >= 1)] == 0.0)


def test_frames_coordinates_round_trip(rng):
    line = LineFrame([0.0, 1.0], [2.0, 1.0])
    s, lam = line.coords(np.array([[0.5, 1.2], [1.5, 0.7]]))
    assert np.allclose(s, [0.5, 1.5]) and np.allclose(lam, [0.2, -0.3])
    arc = CircleArcFrame([0.0, 0.0], 2.0, angle0=np.pi / 2, sweep=np.pi)
    s = rng.uniform(0.1, arc.length - 0.1, 20)
    lam = rng.uniform(-0.5, 0.5, 20)
    x = arc.point(s) + lam[:, None] * arc.normal(s)
    s2, lam2 = arc.coords(x)
    assert np.allclose(s2, s) and np.allclose(lam2, lam)
    # N points away from the center for the clockwise circle
    assert np.allclose(arc.normal(s), arc.point(s) / 2.0)


def make_arc(F0, sigma=0.3, frame=None):
    frame = frame or LineFrame([0.0, 1.0], [2.0, 1.0])
    s = np.linspace(0.0, frame.length, 801)
    psi0 = 0.5 * polynomial_bump((s - 0.2) / 1.6)
    spec = build_stream_function(psi0, s, F0, frame, background=F0.background)
    return StreamArc(spec, frame, TubeCutoff(1.0, 0.5), sigma)


@pytest.mark.parametrize("F0", TEMPLATES, ids=lambda f: f.name)
def test_psi2_satisfies_compatibility_condition(F0):
    arc = make_arc(F0)
    stress = frame_stress_term(arc.frame, arc.spec.s, F0, F0.background)
    res = arc.spec.newcomp_residual(arc.frame, stress)
    assert np.abs(res).max() <= 1e-10 * max(1.0, np.abs(arc.spec.psi2).max())


def test_psi2_on_curved_frame():
    frame = CircleArcFrame([0.0, 0.0], 1.5, angle0=np.pi * 0.9, sweep=0.8 * np.pi)
    arc = make_arc(TEMPLATES[1], frame=frame)
    stress = frame_stress_term(frame, arc.spec.s, TEMPLATES[1], TEMPLATES[1].background)
    assert np.abs(arc.spec.newcomp_residual(frame, stress)).max() < 1e-10


@pytest.mark.parametrize("sigma", [None, 0.3])
def test_stream_velocity_is_divergence_free(sigma, rng):
    arc = make_arc(TEMPLATES[0], sigma)
    x = np.c_[rng.uniform(0.1, 1.9, 300), rng.uniform(0.0, 1.0, 300)]
    div = divergence_fd(lambda p: stream_velocity_at(arc, p), x, h=1e-5)
    assert np.abs(div).max() < 1e-5


def test_stream_normal_speed_is_profile_derivative():
    # on the face lam = 0 the normal speed is d psi0 / ds
    arc = make_arc(TEMPLATES[0])
    s = np.linspace(0.1, 1.9, 50)
    u = stream_velocity_at(arc, arc.frame.point(s))
    dpsi = arc.spec.profiles(s, 1)[0]
    assert np.allclose(u @ arc.frame.normal(np.zeros(1))[0], dpsi, atol=1e-12)


def test_rest_data_is_trivial():
    chart = ConformalChart()
    mesh = annular_sector_mesh(8, 10, 1.0, 2.0, 0.4 * np.pi)
    data = rest_data(mesh, chart)
    assert data.is_rest
    assert np.allclose(data.q_phi, 0.0) and np.allclose(data.acceleration, 0.0)
    assert np.allclose(data.phi(np.linspace(0, 1, 4)), 0.0)
    rep = check_compatibility(data.v0, data.G0, mesh, chart)
    assert rep.passed and max(rep.div_u, rep.div_F, rep.det_F, rep.tangential_traction) < 1e-14
