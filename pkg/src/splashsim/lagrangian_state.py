"""Mapped structured grid on the reference domain, nodal fields and pointwise residuals.

Nodal field layout (N = number of grid nodes):

* scalar ``(N,)``
* vector ``(N, 2)``
* matrix ``(N, 2, 2)`` with ``M[n, i, j]``; gradients append the derivative
  index last, so ``gradient(v)[n, i, j] = d v_i / d alpha_j``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .conformal_geometry import (
    LAMBDA,
    ConformalChart,
    PlanarCurve,
    jacobian_JP,
    jacobian_JP_inv,
)

DET_HEALTH_BOUND = 0.1


class SingularDeformationError(ValueError):
    pass


# ------------------------------------------------------------- 1D stencils


def first_derivative_1d(n: int, h: float) -> sp.csr_matrix:
    """Second-order first derivative; one-sided three-point closure at both ends."""
    if n < 3:
        raise ValueError("need at least 3 points per direction")
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -0.5
        m[i, i + 1] = 0.5
    m[0, :3] = [-1.5, 2.0, -0.5]
    m[n - 1, n - 3 :] = [0.5, -2.0, 1.5]
    return (m / h).tocsr()


def second_derivative_1d(n: int, h: float) -> sp.csr_matrix:
    """Compact three-point second derivative; one-sided four-point closure at both ends."""
    if n < 4:
        raise ValueError("need at least 4 points per direction")
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1 : i + 2] = [1.0, -2.0, 1.0]
    m[0, :4] = [2.0, -5.0, 4.0, -1.0]
    m[n - 1, n - 4 :] = [-1.0, 4.0, -5.0, 2.0]
    return (m / h**2).tocsr()


def _diag(a: np.ndarray) -> sp.dia_matrix:
    return sp.diags(np.asarray(a, dtype=float))


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


# ------------------------------------------------------------- mesh


class Mesh:
    """Logically rectangular grid ``(n1, n2)`` with nodes flattened in C order.

    The logical coordinates run over [0, 1] in both directions. Physical
    derivatives come from the discrete metric of the node map, so linear
    fields are differentiated exactly.
    """

    def __init__(self, nodes: np.ndarray, template: dict | None = None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 3 or nodes.shape[2] != 2:
            raise ValueError("nodes must have shape (n1, n2, 2)")
        self.n1, self.n2 = nodes.shape[:2]
        self.shape = (self.n1, self.n2)
        self.N = self.n1 * self.n2
        self.points = nodes.reshape(-1, 2).copy()
        self.template = template or {"name": "custom"}
        self.hxi = 1.0 / (self.n1 - 1)
        self.heta = 1.0 / (self.n2 - 1)

        i1, i2 = sp.identity(self.n1), sp.identity(self.n2)
        self.Dxi = sp.kron(first_derivative_1d(self.n1, self.hxi), i2).tocsr()
        self.Deta = sp.kron(i1, first_derivative_1d(self.n2, self.heta)).tocsr()
        self.Dxixi = sp.kron(second_derivative_1d(self.n1, self.hxi), i2).tocsr()
        self.Detaeta = sp.kron(i1, second_derivative_1d(self.n2, self.heta)).tocsr()
        self.Dxieta = (self.Dxi @ self.Deta).tocsr()

        x, y = self.points[:, 0], self.points[:, 1]
        jac = np.empty((self.N, 2, 2))
        jac[:, 0, 0] = self.Dxi @ x
        jac[:, 0, 1] = self.Deta @ x
        jac[:, 1, 0] = self.Dxi @ y
        jac[:, 1, 1] = self.Deta @ y
        self.metric_det = np.linalg.det(jac)
        if np.any(np.abs(self.metric_det) < 1e-14):
            raise ValueError("degenerate grid map")
        # inv[a, l] = d s_a / d alpha_l
        inv = np.linalg.inv(jac)
        self._inv = inv
        self.D1 = (_diag(inv[:, 0, 0]) @ self.Dxi + _diag(inv[:, 1, 0]) @ self.Deta).tocsr()
        self.D2 = (_diag(inv[:, 0, 1]) @ self.Dxi + _diag(inv[:, 1, 1]) @ self.Deta).tocsr()
        self.D = (self.D1, self.D2)

        logical_second = {(0, 0): self.Dxixi, (1, 1): self.Detaeta, (0, 1): self.Dxieta, (1, 0): self.Dxieta}
        logical_first = (self.Dxi, self.Deta)
        second = {}
        for lm in [(0, 0), (1, 1), (0, 1)]:
            l, m = lm
            op = sp.csr_matrix((self.N, self.N))
            for a in range(2):
                for b in range(2):
                    op = op + _diag(inv[:, a, l] * inv[:, b, m]) @ logical_second[(a, b)]
                op = op + _diag(self.D[m] @ inv[:, a, l]) @ logical_first[a]
            second[lm] = op.tocsr()
        second[(1, 0)] = second[(0, 1)]
        self.D2nd = second
        self.laplacian = (second[(0, 0)] + second[(1, 1)]).tocsr()

        w1 = _trapezoid_weights(self.n1, self.hxi)
        w2 = _trapezoid_weights(self.n2, self.heta)
        self.area_weights = np.outer(w1, w2).ravel() * np.abs(self.metric_det)

        self._build_boundary(inv)
        pts = self.points.reshape(self.n1, self.n2, 2)
        sp1 = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
        sp2 = np.linalg.norm(np.diff(pts, axis=1), axis=-1)
        self.h = float(min(sp1.min(), sp2.min()))
        self.h_max = float(max(sp1.max(), sp2.max()))
        # mean physical extents of the logical directions, used by the norm transforms
        self.lengths = (float(sp1.sum(axis=0).mean()), float(sp2.sum(axis=1).mean()))

    # ---- boundary

    def index(self, i: int, j: int) -> int:
        return i * self.n2 + j

    def _build_boundary(self, inv: np.ndarray) -> None:
        n1, n2 = self.n1, self.n2
        loop = [self.index(i, 0) for i in range(n1)]
        loop += [self.index(n1 - 1, j) for j in range(1, n2)]
        loop += [self.index(i, n2 - 1) for i in range(n1 - 2, -1, -1)]
        loop += [self.index(0, j) for j in range(n2 - 2, 0, -1)]
        loop = np.array(loop)
        pts = self.points[loop]
        area = 0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
        if area < 0:
            loop = np.concatenate([loop[:1], loop[1:][::-1]])
        self.boundary = loop
        self.Nb = len(loop)
        ii, jj = np.divmod(loop, n2)
        normals = np.zeros((self.Nb, 2))
        sides = np.zeros(self.Nb, dtype=int)
        for mask, a, sign in [
            (ii == 0, 0, -1.0),
            (ii == n1 - 1, 0, 1.0),
            (jj == 0, 1, -1.0),
            (jj == n2 - 1, 1, 1.0),
        ]:
            g = sign * inv[loop[mask], a, :]
            normals[mask] += g / np.linalg.norm(g, axis=1, keepdims=True)
            sides += mask
        self.boundary_normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        self.boundary_tangents = self.boundary_normals @ LAMBDA.T
        self.is_corner = sides > 1
        self.is_boundary = np.zeros(self.N, dtype=bool)
        self.is_boundary[loop] = True
        self.interior = np.flatnonzero(~self.is_boundary)
        self.boundary_weights = self.boundary_quadrature(self.points)

    def boundary_quadrature(self, positions: np.ndarray) -> np.ndarray:
        """Arclength weights of the boundary loop for the given node positions."""
        pts = positions[self.boundary]
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        return 0.5 * (seg + np.roll(seg, 1))

    def boundary_curve(self, positions: np.ndarray | None = None, diagnostic: bool = True) -> PlanarCurve:
        pos = self.points if positions is None else np.asarray(positions)
        return PlanarCurve(pos[self.boundary], diagnostic=diagnostic)

    # ---- calculus

    def integrate(self, f: np.ndarray) -> np.ndarray:
        return np.tensordot(self.area_weights, f, axes=(0, 0))

    def integrate_boundary(self, fb: np.ndarray) -> np.ndarray:
        return np.tensordot(self.boundary_weights, fb, axes=(0, 0))

    def describe(self) -> dict:
        return {"template": self.template, "n1": self.n1, "n2": self.n2, "h": self.h, "h_max": self.h_max}


def _apply(op: sp.spmatrix, field: np.ndarray) -> np.ndarray:
    flat = field.reshape(field.shape[0], -1)
    return (op @ flat).reshape(field.shape)


def gradient(field: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Nodal gradient; the derivative index is appended as the last axis."""
    field = np.asarray(field, dtype=float)
    return np.stack([_apply(mesh.D1, field), _apply(mesh.D2, field)], axis=-1)


def hessian(field: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Second derivatives with compact diagonal stencils; two trailing axes."""
    field = np.asarray(field, dtype=float)
    rows = []
    for l in range(2):
        rows.append(np.stack([_apply(mesh.D2nd[(l, m)], field) for m in range(2)], axis=-1))
    return np.stack(rows, axis=-2)


def laplacian(field: np.ndarray, mesh: Mesh) -> np.ndarray:
    return _apply(mesh.laplacian, np.asarray(field, dtype=float))


def divergence(v: np.ndarray, mesh: Mesh) -> np.ndarray:
    return mesh.D1 @ v[:, 0] + mesh.D2 @ v[:, 1]


def det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def inv2(m: np.ndarray) -> np.ndarray:
    d = det2(m)
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out / d[..., None, None]


def cofactor(m: np.ndarray) -> np.ndarray:
    """-Lambda M Lambda, the cofactor matrix det(M) M^{-T}."""
    return -np.einsum("ij,...jk,kl->...il", LAMBDA, m, LAMBDA)


def zeta(X: np.ndarray, mesh: Mesh, min_det: float = 0.0) -> np.ndarray:
    """Nodal inverse of the deformation Jacobian grad X."""
    gx = gradient(X, mesh)
    d = det2(gx)
    if np.any(d <= min_det):
        k = int(np.argmin(d))
        raise SingularDeformationError(f"det grad X = {d[k]:.3e} at node {k} (bound {min_det})")
    return inv2(gx)


# ------------------------------------------------------------- residuals


def spatial_velocity_gradient(v: np.ndarray, X: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """grad v . zeta . J(X): the original-plane velocity gradient at the labels."""
    return np.einsum("nij,njk,nkl->nil", gradient(v, mesh), zeta(X, mesh), jacobian_JP(X, chart))


def residual_incompressibility(v: np.ndarray, X: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    return np.trace(spatial_velocity_gradient(v, X, mesh, chart), axis1=1, axis2=2)


def residual_detG(G: np.ndarray) -> np.ndarray:
    return det2(np.asarray(G, dtype=float)) - 1.0


def traction_direction(X: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """J(X)^{-1} cof(grad X) n0 at the boundary nodes."""
    b = mesh.boundary
    cof = cofactor(gradient(X, mesh)[b])
    return np.einsum("nij,njk,nk->ni", jacobian_JP_inv(X[b], chart), cof, mesh.boundary_normals)


def stress(v: np.ndarray, q: np.ndarray, G: np.ndarray, X: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """-q I + S + S^T + G G^T - I with S the spatial velocity gradient."""
    s = spatial_velocity_gradient(v, X, mesh, chart)
    eye = np.eye(2)
    return -q[:, None, None] * eye + s + np.swapaxes(s, 1, 2) + np.einsum("nik,njk->nij", G, G) - eye


def residual_traction(
    v: np.ndarray, q: np.ndarray, G: np.ndarray, X: np.ndarray, mesh: Mesh, chart: ConformalChart
) -> np.ndarray:
    """Full nonlinear traction at the boundary nodes, shape (Nb, 2)."""
    b = mesh.boundary
    sig = stress(v, q, G, X, mesh, chart)[b]
    return np.einsum("nij,nj->ni", sig, traction_direction(X, mesh, chart))


# ------------------------------------------------------------- templates


def rectangle_mesh(n1: int, n2: int, lx: float = 1.0, ly: float = 1.0, origin=(0.0, 0.0)) -> Mesh:
    x = origin[0] + np.linspace(0.0, lx, n1)
    y = origin[1] + np.linspace(0.0, ly, n2)
    nodes = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
    return Mesh(nodes, {"name": "rectangle", "n1": n1, "n2": n2, "lx": lx, "ly": ly, "origin": list(origin)})


def annular_sector_mesh(
    n_radial: int,
    n_angular: int,
    r_inner: float,
    r_outer: float,
    half_angle: float,
    end_clustering: float = 0.0,
) -> Mesh:
    """Polar patch r in [r_inner, r_outer], angle in [-half_angle, half_angle].

    ``end_clustering`` > 0 concentrates the angular nodes toward the two
    straight ends with a tanh map; the end spacing shrinks by about
    cosh(c)^2 relative to the middle.
    """
    r = np.linspace(r_inner, r_outer, n_radial)
    eta = np.linspace(-1.0, 1.0, n_angular)
    if end_clustering > 0:
        # odd map, slope smallest at |eta| = 1
        c = end_clustering
        eta = np.tanh(c * eta) / np.tanh(c)
    th = half_angle * eta
    rr, tt = np.meshgrid(r, th, indexing="ij")
    nodes = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)
    meta = {
        "name": "annular_sector",
        "n_radial": n_radial,
        "n_angular": n_angular,
        "r_inner": r_inner,
        "r_outer": r_outer,
        "half_angle": half_angle,
        "end_clustering": end_clustering,
    }
    return Mesh(nodes, meta)


def mesh_from_template(spec: dict) -> Mesh:
    spec = dict(spec)
    name = spec.pop("name")
    if name == "rectangle":
        return rectangle_mesh(**spec)
    if name == "annular_sector":
        return annular_sector_mesh(**spec)
    raise ValueError(f"unknown domain template {name!r}")


# ------------------------------------------------------------- trajectories


@dataclass
class TrajectoryState:
    """Space-time unknowns on a uniform time grid; level 0 is the window start."""

    times: np.ndarray
    X: np.ndarray
    v: np.ndarray
    q: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        K1 = len(self.times)
        for name, arr, tail in [("X", self.X, (2,)), ("v", self.v, (2,)), ("q", self.q, ()), ("G", self.G, (2, 2))]:
            if arr.shape[0] != K1 or arr.shape[2:] != tail:
                raise ValueError(f"{name} has shape {arr.shape}, inconsistent with {K1} time levels")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite values")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def min_det_gradX(self, mesh: Mesh) -> float:
        return float(min(det2(gradient(x, mesh)).min() for x in self.X))

    def snapshot_rows(self, level: int, mesh: Mesh) -> list[list[float]]:
        rows = []
        for n in range(mesh.N):
            rows.append(
                [n, *mesh.points[n], *self.X[level, n], *self.v[level, n], self.q[level, n], *self.G[level, n].ravel()]
            )
        return rows

    def write_snapshot_csv(self, path: str | Path, level: int, mesh: Mesh) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "alpha1", "alpha2", "X1", "X2", "v1", "v2", "q", "G11", "G12", "G21", "G22"])
            w.writerows(self.snapshot_rows(level, mesh))

    def snapshot_json(self, level: int) -> str:
        return json.dumps(
            {
                "t": float(self.times[level]),
                "X": self.X[level].tolist(),
                "v": self.v[level].tolist(),
                "q": self.q[level].tolist(),
                "G": self.G[level].tolist(),
            }
        )


def elastic_force(G: np.ndarray, X: np.ndarray, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """Original-plane (F . grad) F with F = G, written on the labels.

    Component j is sum over l, k of (zeta J(X) G)_{lk} d_l G_{jk}; this equals
    div(F F^T) for column-divergence-free F.
    """
    B = np.einsum("nlm,nmi,nik->nlk", zeta(X, mesh), jacobian_JP(X, chart), G)
    return np.einsum("nlk,njkl->nj", B, gradient(G, mesh))


def lagrangian_laplacian(v: np.ndarray, X: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Tilde-plane Laplacian of a field given on the labels through the flow map X.

    Second derivatives use the compact stencils of the mesh, so for X equal to
    the labels this is exactly ``laplacian``.
    """
    z = zeta(X, mesh)
    gz = gradient(z, mesh)  # gz[n, m, j, l] = d_l zeta_mj
    coef = np.einsum("nlj,nmj->nlm", z, z)
    drift = np.einsum("nlj,nmjl->nm", z, gz)
    out = np.zeros_like(v, dtype=float)
    for l in range(2):
        for m in range(2):
            out += coef[:, l, m].reshape(-1, *([1] * (v.ndim - 1))) * _apply(mesh.D2nd[(l, m)], v)
        out += drift[:, l].reshape(-1, *([1] * (v.ndim - 1))) * _apply(mesh.D[l], v)
    return out
