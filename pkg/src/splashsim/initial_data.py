"""Compatible initial data from a stream function in a tube around boundary arcs.

Near an arc z(s) points are written x = z(s) + lam * N(s) with N = z_s rotated
by +90 degrees. Arcs are oriented so that N is the outward normal of the
fluid domain, which makes u . N = d_s psi / (1 - lam k) positive where the
boundary profile increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import make_interp_spline

from .conformal_geometry import ConformalChart, apply_P_inv, jacobian_JP, jacobian_JP_inv, metric_Q2
from .lagrangian_state import (
    Mesh,
    det2,
    elastic_force,
    gradient,
    laplacian,
)


class InitialDataError(ValueError):
    pass


def rot90(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# ------------------------------------------------------------- frames


class TubularFrame:
    """Arc-length parametrized base curve with tube coordinates (s, lam)."""

    length: float
    closed: bool = False

    def point(self, s):
        raise NotImplementedError

    def tangent(self, s):
        raise NotImplementedError

    def curvature(self, s):
        raise NotImplementedError

    def normal(self, s):
        return rot90(self.tangent(s))

    def extended_tangent(self, s, lam):
        """Theta = (1 - lam k) z_s."""
        return (1.0 - np.asarray(lam) * self.curvature(s))[..., None] * self.tangent(s)

    def coords(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def max_curvature(self) -> float:
        s = np.linspace(0.0, self.length, 401)
        return float(np.abs(self.curvature(s)).max())


class LineFrame(TubularFrame):
    def __init__(self, start, end):
        self.start = np.asarray(start, dtype=float)
        d = np.asarray(end, dtype=float) - self.start
        self.length = float(np.linalg.norm(d))
        self.direction = d / self.length

    def point(self, s):
        return self.start + np.asarray(s)[..., None] * self.direction

    def tangent(self, s):
        return np.broadcast_to(self.direction, np.shape(s) + (2,)).copy()

    def curvature(self, s):
        return np.zeros(np.shape(s))

    def coords(self, x):
        d = np.asarray(x, dtype=float) - self.start
        return d @ self.direction, d @ rot90(self.direction)


class CircleArcFrame(TubularFrame):
    """Circle of given radius traversed clockwise (N points away from the center).

    ``s = 0`` sits at polar angle ``angle0``; with ``closed=True`` the arc is the
    full circle and s is periodic.
    """

    def __init__(self, center, radius: float, angle0: float = 0.0, sweep: float = 2 * np.pi, closed: bool = False):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.angle0 = float(angle0)
        self.closed = closed
        self.length = self.radius * (2 * np.pi if closed else sweep)

    def _angle(self, s):
        return self.angle0 - np.asarray(s) / self.radius

    def point(self, s):
        a = self._angle(s)
        return self.center + self.radius * np.stack([np.cos(a), np.sin(a)], -1)

    def tangent(self, s):
        a = self._angle(s)
        return np.stack([np.sin(a), -np.cos(a)], -1)

    def curvature(self, s):
        # z_ss . N with N outward on a clockwise circle
        return np.full(np.shape(s), -1.0 / self.radius)

    def coords(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1)
        a = np.arctan2(d[..., 1], d[..., 0])
        s = np.mod(self.angle0 - a, 2 * np.pi) * self.radius
        if not self.closed:
            # put the far side of the gap at negative s
            s = np.where(s > 0.5 * (self.length + 2 * np.pi * self.radius), s - 2 * np.pi * self.radius, s)
        return s, r - self.radius


class SplineFrame(TubularFrame):
    """Open arc through sample points, reparametrized by arclength."""

    def __init__(self, points: np.ndarray, dense: int = 4000):
        pts = np.asarray(points, dtype=float)
        t = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        raw = make_interp_spline(t, pts, k=5 if len(pts) > 5 else 3)
        tt = np.linspace(0.0, t[-1], dense)
        speed = np.linalg.norm(raw(tt, 1), axis=1)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(tt))])
        self.length = float(s[-1])
        self._curve = make_interp_spline(s, raw(tt), k=5)
        self._dense_s = s
        self._dense_pts = raw(tt)

    def point(self, s):
        return self._curve(s)

    def tangent(self, s):
        d = self._curve(s, 1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def curvature(self, s):
        d1 = self._curve(s, 1)
        d2 = self._curve(s, 2)
        sp = np.linalg.norm(d1, axis=-1)
        return (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]) / sp**3

    def coords(self, x, iters: int = 8):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        d2 = ((flat[:, None, :] - self._dense_pts[None, ::10, :]) ** 2).sum(-1)
        s = self._dense_s[::10][np.argmin(d2, axis=1)]
        for _ in range(iters):
            r = flat - self._curve(s)
            d1 = self._curve(s, 1)
            dd = self._curve(s, 2)
            g = -(r * d1).sum(-1)
            hss = (d1 * d1).sum(-1) - (r * dd).sum(-1)
            s = np.clip(s - g / hss, 0.0, self.length)
        lam = ((flat - self._curve(s)) * self.normal(s)).sum(-1)
        return s.reshape(x.shape[:-1]), lam.reshape(x.shape[:-1])


# ------------------------------------------------------------- stream function


def _spline(s: np.ndarray, y: np.ndarray, periodic: bool):
    if periodic:
        y = np.append(y[:-1], y[0]) if np.isclose(y[0], y[-1]) else y
        return make_interp_spline(s, y, k=5, bc_type="periodic")
    return make_interp_spline(s, y, k=5)


@dataclass
class StreamSpec:
    """Profiles psi0, psi1, psi2 sampled on ``s``; psi = psi0 + lam psi1 + lam^2 psi2 / 2.

    Open arcs are extended by zero outside the sampled interval, so profiles
    should vanish (with several derivatives) at the ends.
    """

    s: np.ndarray
    psi0: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    periodic: bool = False
    _splines: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self._splines = tuple(_spline(self.s, np.asarray(p, dtype=float), self.periodic) for p in (self.psi0, self.psi1, self.psi2))

    def profiles(self, s: np.ndarray, nu: int = 0) -> np.ndarray:
        """Array (3, ...) with the nu-th s-derivative of psi0, psi1, psi2."""
        s = np.asarray(s, dtype=float)
        lo, hi = self.s[0], self.s[-1]
        if self.periodic:
            sw = lo + np.mod(s - lo, hi - lo)
            return np.stack([sp(sw, nu) for sp in self._splines])
        inside = (s >= lo) & (s <= hi)
        sc = np.clip(s, lo, hi)
        return np.stack([np.where(inside, sp(sc, nu), 0.0) for sp in self._splines])

    def psi_bar(self, s, lam):
        p = self.profiles(s)
        return p[0] + lam * p[1] + 0.5 * lam**2 * p[2]

    def psi_bar_s(self, s, lam):
        p = self.profiles(s, 1)
        return p[0] + lam * p[1] + 0.5 * lam**2 * p[2]

    def psi_bar_lam(self, s, lam):
        p = self.profiles(s)
        return p[1] + lam * p[2]

    def newcomp_residual(self, frame: TubularFrame, stress_term: np.ndarray) -> np.ndarray:
        """d_s^2 psi0 - psi2 - k psi1 + Theta (F0 F0^T - I) N sampled on s."""
        k = frame.curvature(self.s)
        return self._splines[0](self.s, 2) - self.psi2 - k * self.psi1 + stress_term


def frame_stress_term(frame: TubularFrame, s: np.ndarray, F0: Callable, background: np.ndarray | None = None) -> np.ndarray:
    """Theta (F0 F0^T - I + 2 B) N at lam = 0, with B an optional linear background strain."""
    x = frame.point(s)
    F = F0(x)
    M = np.einsum("nik,njk->nij", F, F) - np.eye(2)
    if background is not None:
        M = M + 2.0 * np.asarray(background)
    return np.einsum("ni,nij,nj->n", frame.tangent(s), M, frame.normal(s))


def build_stream_function(
    psi0: np.ndarray,
    s: np.ndarray,
    F0: Callable,
    frame: TubularFrame,
    background: np.ndarray | None = None,
    check_F0: bool = True,
) -> StreamSpec:
    """psi1 = 0 and psi2 = psi0'' + Theta (F0 F0^T - I) N, which zeroes the tangential traction.

    ``F0`` maps original-plane points (n, 2) to matrices (n, 2, 2).
    """
    s = np.asarray(s, dtype=float)
    psi0 = np.asarray(psi0, dtype=float)
    if check_F0:
        validate_F0(F0, frame.point(s))
    d2 = make_interp_spline(s, psi0, k=5)(s, 2)
    psi2 = d2 + frame_stress_term(frame, s, F0, background)
    return StreamSpec(s, psi0, np.zeros_like(psi0), psi2, periodic=frame.closed)


def validate_F0(F0: Callable, points: np.ndarray, tol: float = 1e-6, step: float = 1e-5) -> None:
    """Pointwise det F0 = 1 and column divergence (central differences) checks."""
    pts = np.asarray(points, dtype=float)
    F = F0(pts)
    bad_det = np.abs(det2(F) - 1.0).max()
    if bad_det > tol:
        raise InitialDataError(f"det F0 deviates from 1 by {bad_det:.3e}")
    div = np.zeros((len(pts), 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = step
        div += (F0(pts + e)[:, i, :] - F0(pts - e)[:, i, :]) / (2 * step)
    bad_div = np.abs(div).max()
    scale = max(1.0, np.abs(F).max())
    if bad_div > 1e3 * tol * scale:
        raise InitialDataError(f"div F0 = {bad_div:.3e}")


def smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)

    def f(t):
        return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    a, b = f(x), f(1.0 - x)
    return a / (a + b)


def smooth_step_derivative(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    a = np.exp(-1.0 / xs)
    b = np.exp(-1.0 / (1.0 - xs))
    da = a / xs**2
    db = -b / (1.0 - xs) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


def bump(x: np.ndarray) -> np.ndarray:
    """Smooth bump supported on (0, 1) with maximum 1 at 1/2."""
    x = np.asarray(x, dtype=float)
    return smooth_step(2 * x) * smooth_step(2 * (1 - x))


def polynomial_bump(x: np.ndarray, power: int = 5) -> np.ndarray:
    """(4x(1-x))^power on [0, 1], zero outside; C^(power-1) with gentle derivatives."""
    x = np.asarray(x, dtype=float)
    return np.where((x > 0) & (x < 1), (4.0 * x * (1.0 - x)) ** power, 0.0)


@dataclass(frozen=True)
class TubeCutoff:
    """Profile chi(lam): 1 on [-inner/2, outer/2], 0 outside (-inner, outer); None widths mean no cutoff."""

    inner: float | None = None
    outer: float | None = None

    def value(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = np.ones_like(lam)
        if self.inner is not None:
            out = out * smooth_step(2.0 * (lam + self.inner) / self.inner)
        if self.outer is not None:
            out = out * smooth_step(2.0 * (self.outer - lam) / self.outer)
        return out

    def derivative(self, lam):
        lam = np.asarray(lam, dtype=float)
        a = np.ones_like(lam)
        da = np.zeros_like(lam)
        b = np.ones_like(lam)
        db = np.zeros_like(lam)
        if self.inner is not None:
            x = 2.0 * (lam + self.inner) / self.inner
            a, da = smooth_step(x), smooth_step_derivative(x) * 2.0 / self.inner
        if self.outer is not None:
            x = 2.0 * (self.outer - lam) / self.outer
            b, db = smooth_step(x), -smooth_step_derivative(x) * 2.0 / self.outer
        return da * b + a * db

    def support(self) -> tuple[float, float]:
        return (-np.inf if self.inner is None else -self.inner, np.inf if self.outer is None else self.outer)


@dataclass
class StreamArc:
    """One tube: psi = chi(lam) (psi0 + lam psi1 + g(lam) psi2).

    g(lam) = lam^2 / 2 by default. With ``curvature_scale`` sigma it is
    lam^2 / 2 exp(-lam^2 / (2 sigma^2)), which has the same 2-jet at lam = 0
    (so psi1 and psi2 keep their boundary meaning) but decays over sigma
    instead of growing across a wide tube.
    """

    spec: StreamSpec
    frame: TubularFrame
    cutoff: TubeCutoff = TubeCutoff()
    curvature_scale: float | None = None

    def offset_profile(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """g(lam) and g'(lam)."""
        if self.curvature_scale is None:
            return 0.5 * lam**2, lam
        a = 0.5 / self.curvature_scale**2
        e = np.exp(-a * lam**2)
        return 0.5 * lam**2 * e, lam * (1.0 - a * lam**2) * e


def stream_velocity_at(arc: StreamArc, x: np.ndarray) -> np.ndarray:
    """u = rot90(grad psi) at original-plane points."""
    frame, spec, cut = arc.frame, arc.spec, arc.cutoff
    s, lam = frame.coords(x)
    lo, hi = cut.support()
    active = (lam > lo) & (lam < hi)
    u = np.zeros(np.shape(x), dtype=float)
    if not np.any(active):
        return u
    s_a, lam_a = s[active], lam[active]
    k = frame.curvature(s_a)
    if np.any(np.abs(lam_a * k) >= 1.0):
        raise InitialDataError("tube coordinates degenerate (|lam k| >= 1)")
    p, dp = spec.profiles(s_a), spec.profiles(s_a, 1)
    chi, dchi = cut.value(lam_a), cut.derivative(lam_a)
    g, dg = arc.offset_profile(lam_a)
    psi_s = chi * (dp[0] + lam_a * dp[1] + g * dp[2])
    psi_lam = dchi * (p[0] + lam_a * p[1] + g * p[2]) + chi * (p[1] + dg * p[2])
    u[active] = (psi_s / (1.0 - lam_a * k))[:, None] * frame.normal(s_a) - psi_lam[:, None] * frame.tangent(s_a)
    return u


def velocity_from_stream(
    spec: StreamSpec | list[StreamArc],
    frame: TubularFrame | None,
    mesh: Mesh,
    chart: ConformalChart | None = None,
    cutoff: TubeCutoff = TubeCutoff(),
) -> np.ndarray:
    """Original-plane velocity at the mesh nodes; several arcs are superposed."""
    arcs = spec if isinstance(spec, list) else [StreamArc(spec, frame, cutoff)]
    x = mesh.points if chart is None else apply_P_inv(mesh.points, chart)
    u = np.zeros_like(x)
    for arc in arcs:
        u += stream_velocity_at(arc, x)
    return u


# ------------------------------------------------------------- F0 templates


F0_TEMPLATES = ("identity", "shear", "twist", "stretch", "constant")


@dataclass(frozen=True)
class F0Template:
    """Initial deformation gradient on the original plane, with optional linear background strain."""

    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[:-1]
        if self.name == "identity":
            return np.broadcast_to(np.eye(2), n + (2, 2)).copy()
        if self.name == "shear":
            c = float(self.params.get("c", 0.2))
            return np.broadcast_to(np.array([[1.0, c], [0.0, 1.0]]), n + (2, 2)).copy()
        if self.name == "twist":
            return _twist_F0(x, **self.params)
        if self.name == "stretch":
            a = float(self.params.get("a", 2.0))
            return np.broadcast_to(np.diag([a, 1.0 / a]), n + (2, 2)).copy()
        if self.name == "constant":
            M = np.asarray(self.params.get("matrix", np.eye(2)), dtype=float).reshape(2, 2)
            return np.broadcast_to(M, n + (2, 2)).copy()
        raise InitialDataError(f"unknown F0 template {self.name!r}")

    @property
    def background(self) -> np.ndarray | None:
        """Symmetric trace-free B with 2B + F0 F0^T - I isotropic, for constant F0."""
        if self.name in ("shear", "stretch", "constant"):
            F = self(np.zeros((1, 2)))[0]
            M = F @ F.T - np.eye(2)
            mu = 0.5 * np.trace(M)
            return 0.5 * (mu * np.eye(2) - M)
        return None

    def background_velocity(self, x: np.ndarray) -> np.ndarray:
        B = self.background
        if B is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.asarray(x, dtype=float) @ B.T


def _twist_F0(x, center=(0.0, 0.0), radius: float = 0.5, amplitude: float = 0.3):
    """adj(grad Phi) for the area-preserving twist Phi: rotation by omega(|x - c|) about c.

    Both columns are rotated gradients of the components of Phi, hence
    divergence free, and the determinant is 1.
    """
    d = x - np.asarray(center, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    # omega = A (1 - rho^2)^6 inside the disc: C^5 with mild derivatives
    rho2 = np.minimum((r / radius) ** 2, 1.0)
    omega = amplitude * (1.0 - rho2) ** 6
    domega = -12.0 * amplitude * (1.0 - rho2) ** 5 * r / radius**2
    c, s = np.cos(omega), np.sin(omega)
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    Rd = np.einsum("...ij,...j->...i", R, d)
    rhat = np.where(r[..., None] > 0, d / np.where(r > 0, r, 1.0)[..., None], 0.0)
    grad = R + np.einsum("...i,...j->...ij", rot90(Rd), domega[..., None] * rhat)
    out = np.empty_like(grad)
    out[..., 0, 0] = grad[..., 1, 1]
    out[..., 0, 1] = -grad[..., 0, 1]
    out[..., 1, 0] = -grad[..., 1, 0]
    out[..., 1, 1] = grad[..., 0, 0]
    return out


# ------------------------------------------------------------- compatibility


@dataclass
class CompatibilityReport:
    div_u: float
    div_F: float
    det_F: float
    tangential_traction: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.div_u, self.div_F, self.det_F, self.tangential_traction) <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "div_u": self.div_u,
            "div_F": self.div_F,
            "det_F": self.det_F,
            "tangential_traction": self.tangential_traction,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def original_normals(mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """Unit original-plane normals at the boundary nodes, J^{-1} n0 normalized."""
    b = mesh.boundary
    m = np.einsum("nij,nj->ni", jacobian_JP_inv(mesh.points[b], chart), mesh.boundary_normals)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def check_compatibility(
    u0: np.ndarray, G0: np.ndarray, mesh: Mesh, chart: ConformalChart, tol: float = 1e-2
) -> CompatibilityReport:
    """Max nodal residuals of div u0, div F0, det F0 - 1 and the tangential traction.

    Fields are nodal on the mesh with X = labels; corners are skipped in the
    traction check because their normal is not defined.
    """
    J = jacobian_JP(mesh.points, chart)
    grad_u = np.einsum("nik,nkj->nij", gradient(u0, mesh), J)
    div_u = np.abs(np.trace(grad_u, axis1=1, axis2=2)).max()
    dG = gradient(G0, mesh)  # [n, i, k, m] = d_m G_ik
    div_F = np.abs(np.einsum("nmi,nikm->nk", J, dG)).max()
    det_F = np.abs(det2(G0) - 1.0).max()
    b = mesh.boundary
    n = original_normals(mesh, chart)
    t = rot90(n)
    S = grad_u[b] + np.swapaxes(grad_u[b], 1, 2) + np.einsum("nik,njk->nij", G0[b], G0[b]) - np.eye(2)
    tang = np.abs(np.einsum("ni,nij,nj->n", t, S, n))[~mesh.is_corner]
    return CompatibilityReport(float(div_u), float(div_F), float(det_F), float(tang.max(initial=0.0)), tol)


# ------------------------------------------------------------- q_phi and phi


def solve_dirichlet_poisson(rhs: np.ndarray, boundary_values: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """Solve -Q^2 Lap q = rhs inside, q = boundary_values on the boundary loop."""
    Q2 = metric_Q2(mesh.points, chart)
    A = (-sp.diags(Q2) @ mesh.laplacian).tolil()
    b = np.array(rhs, dtype=float)
    for k, node in enumerate(mesh.boundary):
        A.rows[node] = [node]
        A.data[node] = [1.0]
        b[node] = boundary_values[k]
    q = spla.spsolve(A.tocsr(), b)
    if not np.all(np.isfinite(q)):
        raise InitialDataError("pressure solve failed")
    return q


def q_phi_data(v0: np.ndarray, G0: np.ndarray, mesh: Mesh, chart: ConformalChart) -> tuple[np.ndarray, np.ndarray]:
    """Right side and Dirichlet data of the initial pressure problem."""
    X = mesh.points
    J = jacobian_JP(X, chart)
    gvJ = np.einsum("nik,nkj->nij", gradient(v0, mesh), J)
    fG = elastic_force(G0, X, mesh, chart)
    div_f = np.einsum("njm,nmj->n", gradient(fG, mesh), J)
    rhs = np.einsum("nij,nji->n", gvJ, gvJ) - div_f
    b = mesh.boundary
    n = original_normals(mesh, chart)
    S = gvJ[b] + np.swapaxes(gvJ[b], 1, 2) + np.einsum("nik,njk->nij", G0[b], G0[b]) - np.eye(2)
    return rhs, np.einsum("ni,nij,nj->n", n, S, n)


def solve_q_phi(v0: np.ndarray, G0: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    rhs, bc = q_phi_data(v0, G0, mesh, chart)
    return solve_dirichlet_poisson(rhs, bc, mesh, chart)


def initial_acceleration(v0, q_phi, G0, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """Q^2 Lap v0 - J^T grad q_phi + elastic force of G0."""
    X = mesh.points
    Q2 = metric_Q2(X, chart)
    J = jacobian_JP(X, chart)
    return (
        Q2[:, None] * laplacian(v0, mesh)
        - np.einsum("nki,nk->ni", J, gradient(q_phi, mesh))
        + elastic_force(G0, X, mesh, chart)
    )


def build_phi(t, v0, q_phi, G0, mesh: Mesh, chart: ConformalChart, acceleration: np.ndarray | None = None) -> np.ndarray:
    """phi(t) = v0 + t exp(-t^2) a0; ``t`` may be an array of times (leading axis)."""
    a0 = initial_acceleration(v0, q_phi, G0, mesh, chart) if acceleration is None else acceleration
    t = np.asarray(t, dtype=float)
    weight = t * np.exp(-(t**2))
    return v0 + weight[..., None, None] * a0 if t.ndim else v0 + float(weight) * a0


@dataclass
class InitialData:
    """Everything the iteration needs at the start of a window."""

    mesh: Mesh
    chart: ConformalChart
    v0: np.ndarray
    G0: np.ndarray
    q_phi: np.ndarray = None
    acceleration: np.ndarray = None

    def __post_init__(self):
        if self.q_phi is None:
            self.q_phi = solve_q_phi(self.v0, self.G0, self.mesh, self.chart)
        if self.acceleration is None:
            self.acceleration = initial_acceleration(self.v0, self.q_phi, self.G0, self.mesh, self.chart)

    def phi(self, t) -> np.ndarray:
        return build_phi(t, self.v0, self.q_phi, self.G0, self.mesh, self.chart, self.acceleration)

    def compatibility(self, tol: float = 1e-2) -> CompatibilityReport:
        return check_compatibility(self.v0, self.G0, self.mesh, self.chart, tol)

    @property
    def is_rest(self) -> bool:
        return not np.any(self.v0) and np.array_equal(self.G0, np.broadcast_to(np.eye(2), self.G0.shape))


def rest_data(mesh: Mesh, chart: ConformalChart) -> InitialData:
    G0 = np.broadcast_to(np.eye(2), (mesh.N, 2, 2)).copy()
    return InitialData(mesh, chart, np.zeros((mesh.N, 2)), G0)

