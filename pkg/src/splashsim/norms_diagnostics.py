"""Discrete fractional Sobolev and anisotropic space-time norms.

Nodal data on the logically rectangular mesh are extended past each edge by
a higher-order reflection that fades out under a smooth taper, giving a
periodic array on a covering torus. For s >= 0 the squared norm is

    ||f||^2 = (quadrature L2 norm)^2 + A * sum_{k != 0} ((1 + |k|^2)^s - 1) |c_k|^2

where c_k are the normalized Fourier coefficients of the extension of f
minus its mean and A is the torus area. This is a positive definite
quadratic form, equal to the L2 norm at s = 0, increasing in s and blind to
constants in the increment. Negative exponents use the plain symbol on the
extension. Time regularity is measured the same way along the time axis,
applied to the linear spatial feature vectors, so mixed H^r_t H^s_x norms
reduce to one more transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lagrangian_state import Mesh, gradient


@dataclass(frozen=True)
class NormConfig:
    s: float = 2.25
    gamma: float = 1.1
    pad: int | None = None
    order: int | None = None

    def __post_init__(self):
        if not 2.0 < self.s < 2.5:
            raise ValueError(f"s = {self.s} must lie in (2, 2.5)")
        if not 1.0 < self.gamma < self.s - 1.0:
            raise ValueError(f"gamma = {self.gamma} must lie in (1, s - 1)")


def reflection_coefficients(order: int) -> np.ndarray:
    """c_j with sum_j c_j j^m = (-1)^m for m = 0..order, j = 1..order+1."""
    j = np.arange(1, order + 2, dtype=float)
    V = np.vander(j, order + 1, increasing=True).T
    rhs = (-1.0) ** np.arange(order + 1)
    return np.linalg.solve(V, rhs)


def _smooth_step(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


class AxisExtension:
    """Reflection-and-taper extension of one axis of n samples by ``pad`` on each side."""

    def __init__(self, n: int, pad: int | None = None, order: int | None = None):
        if n < 3:
            raise ValueError("need at least 3 samples to extend")
        self.n = n
        self.pad = pad if pad is not None else max(2, (n - 1) // 4)
        max_order = (n - 1) // self.pad - 1
        if max_order < 0:
            raise ValueError(f"pad {self.pad} too wide for {n} samples")
        self.order = min(4 if order is None else order, max_order)
        self.coeffs = reflection_coefficients(self.order)
        d = np.arange(1, self.pad + 1)
        self.taper = _smooth_step((self.pad + 0.5 - d) / (self.pad + 0.5))
        # gather matrices: pad value at distance d is sum_j c_j f(j d)
        self._left = np.zeros((self.pad, n))
        for di in d:
            for jj, c in enumerate(self.coeffs, start=1):
                self._left[di - 1, jj * di] += c * self.taper[di - 1]
        self._right = self._left[:, ::-1]

    @property
    def size(self) -> int:
        return self.n + 2 * self.pad

    def apply(self, a: np.ndarray, axis: int) -> np.ndarray:
        a = np.moveaxis(a, axis, -1)
        left = a @ self._left.T
        right = a @ self._right.T
        out = np.concatenate([left[..., ::-1], a, right], axis=-1)
        return np.moveaxis(out, -1, axis)


def _wavenumbers(n: int, h: float) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n, d=h)


def torus_Hs(values: np.ndarray, lengths, s: float, normalized: bool = True) -> float:
    """Spectral H^s norm of periodic samples on a torus with the given side lengths.

    With ``normalized`` the torus measure is scaled to 1.
    """
    values = np.asarray(values)
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (values.ndim,))
    coef = np.fft.fftn(values) / values.size
    ks = np.meshgrid(*[_wavenumbers(n, L / n) for n, L in zip(values.shape, lengths)], indexing="ij")
    symbol = (1.0 + sum(k**2 for k in ks)) ** s
    measure = 1.0 if normalized else float(np.prod(lengths))
    return float(np.sqrt(measure * np.sum(symbol * np.abs(coef) ** 2)))


class SpatialTransform:
    """Feature maps on one mesh whose Euclidean length is the H^s norm."""

    def __init__(self, mesh: Mesh, pad: int | None = None, order: int | None = None):
        self.mesh = mesh
        self.ext = (AxisExtension(mesh.n1, pad, order), AxisExtension(mesh.n2, pad, order))
        self.h = (mesh.lengths[0] / (mesh.n1 - 1), mesh.lengths[1] / (mesh.n2 - 1))
        n_t = (self.ext[0].size, self.ext[1].size)
        self.torus_area = n_t[0] * self.h[0] * n_t[1] * self.h[1]
        k1 = _wavenumbers(n_t[0], self.h[0])
        k2 = _wavenumbers(n_t[1], self.h[1])
        self.lam = 1.0 + k1[:, None] ** 2 + k2[None, :] ** 2
        self.weights = mesh.area_weights
        self._sqrt_w = np.sqrt(self.weights)
        self._cache: dict[float, np.ndarray] = {}

    def _symbol(self, s: float) -> np.ndarray:
        if s not in self._cache:
            sym = self.lam**s - 1.0 if s >= 0 else self.lam**s
            self._cache[s] = np.sqrt(self.torus_area * np.maximum(sym, 0.0))
        return self._cache[s]

    def _spectrum(self, f: np.ndarray) -> np.ndarray:
        """f: (B, N, C) -> normalized coefficients (B, n1t, n2t, C)."""
        B, _, C = f.shape
        g = f.reshape(B, self.mesh.n1, self.mesh.n2, C)
        g = self.ext[0].apply(g, 1)
        g = self.ext[1].apply(g, 2)
        return np.fft.fft2(g, axes=(1, 2)) / (g.shape[1] * g.shape[2])

    def features(self, f: np.ndarray, s: float) -> np.ndarray:
        """f: (B, N, C) batch of nodal fields -> (B, F) complex features."""
        f = np.asarray(f, dtype=float)
        B = f.shape[0]
        sym = self._symbol(s)[None, :, :, None]
        if s < 0:
            return (sym * self._spectrum(f)).reshape(B, -1)
        mean = np.einsum("n,bnc->bc", self.weights, f) / self.weights.sum()
        l2 = (self._sqrt_w[None, :, None] * f).reshape(B, -1)
        spec = (sym * self._spectrum(f - mean[:, None, :])).reshape(B, -1)
        return np.concatenate([l2.astype(complex), spec], axis=1)

    def norm(self, field: np.ndarray, s: float) -> float:
        f = _as_batch(np.asarray(field)[None])
        return float(np.linalg.norm(self.features(f, s)))


class BoundaryTransform:
    """Periodic transform of traces along the closed boundary loop."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.weights = mesh.boundary_weights
        self.length = float(self.weights.sum())
        nb = mesh.Nb
        k = _wavenumbers(nb, self.length / nb)
        self.lam = 1.0 + k**2

    def features(self, tr: np.ndarray, s: float) -> np.ndarray:
        """tr: (B, Nb, C) -> (B, F)."""
        B = tr.shape[0]
        mean = np.einsum("n,bnc->bc", self.weights, tr) / self.length
        l2 = (np.sqrt(self.weights)[None, :, None] * tr).reshape(B, -1).astype(complex)
        coef = np.fft.fft(tr - mean[:, None, :], axis=1) / tr.shape[1]
        sym = np.sqrt(self.length * np.maximum(self.lam**s - 1.0, 0.0))[None, :, None]
        return np.concatenate([l2, (sym * coef).reshape(B, -1)], axis=1)


class TimeTransform:
    """H^r in time of a trajectory of feature vectors on a uniform grid."""

    def __init__(self, times: np.ndarray, pad: int | None = None, order: int | None = None):
        self.times = np.asarray(times, dtype=float)
        K1 = len(self.times)
        self.dt = float(self.times[1] - self.times[0])
        self.weights = np.full(K1, self.dt)
        self.weights[0] = self.weights[-1] = 0.5 * self.dt
        self.T = float(self.times[-1] - self.times[0])
        self.ext = AxisExtension(K1, pad, order)
        self.length = self.ext.size * self.dt
        self.omega = _wavenumbers(self.ext.size, self.dt)

    def norm(self, feats: np.ndarray, r: float) -> float:
        """feats: (K+1, F) complex."""
        l2 = np.einsum("k,kf->", self.weights, np.abs(feats) ** 2).real
        if r == 0:
            return float(np.sqrt(l2))
        mean = np.einsum("k,kf->f", self.weights, feats) / self.T
        ext = self.ext.apply((feats - mean).T, 1)  # (F, Kt)
        coef = np.fft.fft(ext, axis=1) / ext.shape[1]
        sym = np.maximum((1.0 + self.omega**2) ** r - 1.0, 0.0)
        inc = self.length * np.sum(sym[None, :] * np.abs(coef) ** 2)
        return float(np.sqrt(l2 + inc))

    def l2_of_norms(self, values: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.weights * np.asarray(values) ** 2)))


def _as_batch(traj: np.ndarray) -> np.ndarray:
    """(K+1, N, ...) -> (K+1, N, C)."""
    traj = np.asarray(traj, dtype=float)
    return traj.reshape(traj.shape[0], traj.shape[1], -1)


class NormPlan:
    """Transforms for one mesh and time grid, shared by all norm evaluations."""

    def __init__(self, mesh: Mesh, times: np.ndarray, config: NormConfig | None = None):
        self.mesh = mesh
        self.config = config or NormConfig()
        self.space = SpatialTransform(mesh, self.config.pad, self.config.order)
        self.boundary = BoundaryTransform(mesh)
        self.time = TimeTransform(times, self.config.pad, self.config.order) if len(times) >= 3 else None
        self.times = np.asarray(times, dtype=float)

    @cached_property
    def first_positive(self) -> int:
        return int(np.argmax(self.times > self.times[0]))

    def spatial_norms(self, traj: np.ndarray, s: float) -> np.ndarray:
        f = self.space.features(_as_batch(traj), s)
        return np.linalg.norm(f, axis=1)

    def mixed(self, traj: np.ndarray, r: float, sx: float) -> float:
        """H^r_t H^sx_x norm."""
        return self.time.norm(self.space.features(_as_batch(traj), sx), r)

    def mixed_boundary(self, tr: np.ndarray, r: float, sx: float) -> float:
        return self.time.norm(self.boundary.features(_as_batch(tr), sx), r)


def sobolev_Hs(field: np.ndarray, s: float, mesh: Mesh, plan: NormPlan | None = None) -> float:
    space = plan.space if plan is not None else SpatialTransform(mesh)
    return space.norm(field, s)


def spacetime_Ks(traj: np.ndarray, s: float, plan: NormPlan) -> float:
    """max(L2_t H^s_x, H^{s/2}_t L2_x)."""
    a = plan.time.l2_of_norms(plan.spatial_norms(traj, s))
    b = plan.mixed(traj, s / 2.0, 0.0)
    return max(a, b)


def spacetime_Kbar(traj: np.ndarray, s: float, plan: NormPlan) -> float:
    """max(L2_t H^s_x, H^{(s+1)/2}_t H^{-1}_x)."""
    a = plan.time.l2_of_norms(plan.spatial_norms(traj, s))
    b = plan.mixed(traj, (s + 1.0) / 2.0, -1.0)
    return max(a, b)


def weighted_F_norm(traj: np.ndarray, s: float, gamma: float, plan: NormPlan) -> float:
    """max(sup_{t>0} t^{-1/4} ||f(t)||_{H^{s+1}}, ||f||_{H^2_t H^gamma_x})."""
    k0 = plan.first_positive
    t = plan.times[k0:] - plan.times[0]
    sup = float(np.max(t ** (-0.25) * plan.spatial_norms(np.asarray(traj)[k0:], s + 1.0)))
    return max(sup, plan.mixed(traj, 2.0, gamma))


def _boundary_K(tr: np.ndarray, r: float, plan: NormPlan) -> float:
    a = plan.time.l2_of_norms(np.linalg.norm(plan.boundary.features(_as_batch(tr), r), axis=1))
    b = plan.mixed_boundary(tr, r / 2.0, 0.0)
    return max(a, b)


def pressure_norm_Kspr(q_traj: np.ndarray, s: float, plan: NormPlan) -> float:
    """K^{s-1} of grad q plus K^{s-1/2} of the boundary trace."""
    q_traj = np.asarray(q_traj, dtype=float)
    grads = np.stack([gradient(q, plan.mesh) for q in q_traj])
    trace = q_traj[:, plan.mesh.boundary]
    return spacetime_Ks(grads, s - 1.0, plan) + _boundary_K(trace, s - 0.5, plan)


def composite_norm(dw, dq, dX, dG, plan: NormPlan) -> dict[str, float]:
    """Component norms of a trajectory difference and their sum."""
    s, g = plan.config.s, plan.config.gamma
    parts = {
        "v": spacetime_Ks(dw, s + 1.0, plan),
        "q": pressure_norm_Kspr(dq, s, plan),
        "X": weighted_F_norm(dX, s, g, plan),
        "G": weighted_F_norm(dG, s - 1.0, g - 1.0, plan),
    }
    parts["total"] = sum(parts.values())
    return parts


def embedding_pairs(s: float, eps: float = 0.05, delta: float = 0.05) -> dict[str, tuple[float, float]]:
    """Time and space exponents of the six left-hand norms dominated by F^{s+1,gamma}."""
    return {
        "E1": ((s + 1) / 2, 1 - eps),
        "E2": ((s + 1) / 2 + eps, 1 + delta),
        "E3": ((s - 1) / 2 + eps, 2 + delta),
        "E4": (s / 2 - 0.25 + eps, 2 + delta),
        "E5": (1.0, s - 1),
        "E6": (0.5 + 2 * eps, s),
    }


def embedding_ratio(corpus: list[np.ndarray], pair: str, plan: NormPlan, eps: float = 0.05, delta: float = 0.05) -> list[float]:
    """Left norm over F^{s+1,gamma} for each nonzero trajectory of the corpus."""
    r, sx = embedding_pairs(plan.config.s, eps, delta)[pair]
    out = []
    for traj in corpus:
        right = weighted_F_norm(traj, plan.config.s, plan.config.gamma, plan)
        if right == 0.0:
            continue
        out.append(plan.mixed(traj, r, sx) / right)
    return out
