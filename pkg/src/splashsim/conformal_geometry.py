"""Square-root chart, planar polylines and curve-distance utilities.

Points and vectors are numpy arrays whose last axis has length 2; every
chart function is vectorized over the leading axes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LAMBDA = np.array([[0.0, -1.0], [1.0, 0.0]])


class ChartError(ValueError):
    """Base class for chart-domain violations."""


class BranchCutError(ChartError):
    pass


class SingularChartError(ChartError):
    pass


class CurveError(ValueError):
    pass


def _as_complex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., 0] + 1j * p[..., 1]


def _as_real(c: np.ndarray) -> np.ndarray:
    return np.stack([np.real(c), np.imag(c)], axis=-1)


def cr_matrix(c: np.ndarray) -> np.ndarray:
    """Real 2x2 form [[a, -b], [b, a]] of multiplication by c = a + ib."""
    c = np.asarray(c)
    a, b = np.real(c), np.imag(c)
    return np.stack([np.stack([a, -b], -1), np.stack([b, a], -1)], -2)


@dataclass(frozen=True)
class ConformalChart:
    """Branch of z -> sqrt(z - center) with the cut along a ray.

    The cut leaves ``center`` in direction ``branch_cut_angle``; arguments
    are taken in the open interval (angle - 2pi, angle). With the default
    angle pi this is the principal square root. ``kind="identity"`` gives
    the trivial chart used by unit tests (J = I, Q^2 = 1).
    """

    branch_cut_angle: float = np.pi
    center: tuple[float, float] = (0.0, 0.0)
    kind: str = "sqrt"
    cut_tolerance: float = 1e-9
    origin_tolerance: float = 1e-12

    def __post_init__(self):
        if self.kind not in ("sqrt", "identity"):
            raise ValueError(f"unknown chart kind {self.kind!r}")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def distance_to_cut(self, z: np.ndarray) -> np.ndarray:
        """Euclidean distance from original-plane points to the cut ray."""
        d = np.asarray(z, dtype=float) - np.asarray(self.center)
        e = np.array([np.cos(self.branch_cut_angle), np.sin(self.branch_cut_angle)])
        along = d @ e
        perp = np.abs(d[..., 0] * e[1] - d[..., 1] * e[0])
        return np.where(along > 0.0, perp, np.linalg.norm(d, axis=-1))

    def check_tilde_points(self, xt: np.ndarray, what: str = "points") -> None:
        """Raise if any tilde-plane point is at the chart singularity."""
        if self.is_identity:
            return
        r = np.linalg.norm(np.asarray(xt, dtype=float), axis=-1)
        if np.any(r <= self.origin_tolerance):
            k = int(np.argmin(r))
            raise SingularChartError(f"{what}: node {k} at distance {r.flat[k]:.3e} from the chart origin")


def apply_P(z: np.ndarray, chart: ConformalChart) -> np.ndarray:
    """Map original-plane points into the tilde plane."""
    z = np.asarray(z, dtype=float)
    if chart.is_identity:
        return z.copy()
    dist = chart.distance_to_cut(z)
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    if np.any(dist <= chart.cut_tolerance * scale):
        raise BranchCutError("point on the branch cut")
    w = _as_complex(z) - complex(*chart.center)
    # rotate so the cut lies on the negative real axis, take the principal root, rotate back
    rot = np.exp(1j * (chart.branch_cut_angle - np.pi))
    root = np.sqrt(w / rot) * np.sqrt(rot)
    return _as_real(root)


def apply_P_inv(zt: np.ndarray, chart: ConformalChart | None = None) -> np.ndarray:
    """Inverse chart: complex squaring (shifted by the chart center)."""
    zt = np.asarray(zt, dtype=float)
    if chart is not None and chart.is_identity:
        return zt.copy()
    center = complex(*chart.center) if chart is not None else 0.0
    return _as_real(_as_complex(zt) ** 2 + center)


def _derivative(xt: np.ndarray, chart: ConformalChart) -> np.ndarray:
    chart.check_tilde_points(xt, "jacobian")
    return 1.0 / (2.0 * _as_complex(xt))


def jacobian_JP(xt: np.ndarray, chart: ConformalChart) -> np.ndarray:
    """Real Jacobian of P evaluated at the tilde point, shape (..., 2, 2)."""
    xt = np.asarray(xt, dtype=float)
    if chart.is_identity:
        return np.broadcast_to(np.eye(2), xt.shape[:-1] + (2, 2)).copy()
    return cr_matrix(_derivative(xt, chart))


def jacobian_JP_inv(xt: np.ndarray, chart: ConformalChart) -> np.ndarray:
    xt = np.asarray(xt, dtype=float)
    if chart.is_identity:
        return np.broadcast_to(np.eye(2), xt.shape[:-1] + (2, 2)).copy()
    chart.check_tilde_points(xt, "jacobian")
    return cr_matrix(2.0 * _as_complex(xt))


def metric_Q2(xt: np.ndarray, chart: ConformalChart) -> np.ndarray:
    xt = np.asarray(xt, dtype=float)
    if chart.is_identity:
        return np.ones(xt.shape[:-1])
    return np.abs(_derivative(xt, chart)) ** 2


def apply_JP(xt: np.ndarray, vec: np.ndarray, chart: ConformalChart) -> np.ndarray:
    """J^P(xt) @ vec, done in complex arithmetic."""
    if chart.is_identity:
        return np.array(vec, dtype=float)
    return _as_real(_derivative(xt, chart) * _as_complex(vec))


def transformed_normal(n: np.ndarray, xt: np.ndarray, chart: ConformalChart) -> np.ndarray:
    """-Lambda J Lambda n; equals J n because J commutes with Lambda."""
    n = np.asarray(n, dtype=float)
    jac = jacobian_JP(xt, chart)
    return -np.einsum("ij,...jk,kl,...l->...i", LAMBDA, jac, LAMBDA, n)


@dataclass(frozen=True)
class Shift:
    epsilon: float
    b: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            raise ValueError("shift direction must be nonzero")
        object.__setattr__(self, "b", tuple(b / nb))

    @property
    def vector(self) -> np.ndarray:
        return self.epsilon * np.asarray(self.b)


# ---------------------------------------------------------------- curves


def _segment_arrays(nodes: np.ndarray):
    a = nodes
    b = np.roll(nodes, -1, axis=0)
    return a, b


@dataclass
class PlanarCurve:
    """Closed polyline; node i connects to node i+1 and the last to the first.

    Non-diagnostic curves must be simple and counterclockwise.
    """

    nodes: np.ndarray
    diagnostic: bool = False
    arclength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = np.array(self.nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2 or len(self.nodes) < 3:
            raise CurveError("curve needs at least 3 nodes of shape (n, 2)")
        seg = self.segment_lengths
        if np.any(seg <= 0.0):
            raise CurveError(f"degenerate segment at node {int(np.argmin(seg))}")
        self.arclength = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
        if not self.diagnostic:
            if self.signed_area <= 0.0:
                raise CurveError("curve must be counterclockwise")
            if len(self.nodes) >= 4 and self_intersect(self) is not None:
                raise CurveError("curve is not simple")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def segment_lengths(self) -> np.ndarray:
        a, b = _segment_arrays(self.nodes)
        return np.linalg.norm(b - a, axis=1)

    @property
    def perimeter(self) -> float:
        return float(self.segment_lengths.sum())

    @property
    def signed_area(self) -> float:
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def diameter(self) -> float:
        d = self.nodes[:, None, :] - self.nodes[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            w.writerows(self.nodes.tolist())

    def to_json(self) -> list[list[float]]:
        return self.nodes.tolist()

    @classmethod
    def from_csv(cls, path: str | Path, diagnostic: bool = False) -> "PlanarCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data, diagnostic=diagnostic)

    @classmethod
    def from_json(cls, text: str, diagnostic: bool = False) -> "PlanarCurve":
        return cls(np.array(json.loads(text), dtype=float), diagnostic=diagnostic)


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Exact-predicate style test (with collinear overlap) on broadcast arrays."""
    d1 = _cross(q2 - q1, p1 - q1)
    d2 = _cross(q2 - q1, p2 - q1)
    d3 = _cross(p2 - p1, q1 - p1)
    d4 = _cross(p2 - p1, q2 - p1)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)

    def on_seg(a, b, c, d):
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        return (d == 0) & np.all((c >= lo) & (c <= hi), axis=-1)

    touch = (
        on_seg(q1, q2, p1, d1)
        | on_seg(q1, q2, p2, d2)
        | on_seg(p1, p2, q1, d3)
        | on_seg(p1, p2, q2, d4)
    )
    return proper | touch


def _intersection_point(p1, p2, q1, q2) -> np.ndarray:
    r, s = p2 - p1, q2 - q1
    den = _cross(r, s)
    if abs(den) < 1e-300:
        return 0.5 * (p1 + p2)
    t = _cross(q1 - p1, s) / den
    return p1 + np.clip(t, 0.0, 1.0) * r


@dataclass(frozen=True)
class Intersection:
    s1: float
    s2: float
    point: np.ndarray


def self_intersect(curve: PlanarCurve) -> Intersection | None:
    """First (lexicographic) pair of non-adjacent intersecting segments."""
    n = len(curve)
    if n < 4:
        raise CurveError("self_intersect needs at least 4 nodes")
    a, b = _segment_arrays(curve.nodes)
    for i in range(n - 2):
        js = np.arange(i + 2, n)
        if i == 0:
            js = js[js != n - 1]
        if js.size == 0:
            continue
        hit = _segments_intersect(a[i], b[i], a[js], b[js])
        if np.any(hit):
            j = int(js[np.argmax(hit)])
            pt = _intersection_point(a[i], b[i], a[j], b[j])
            s1 = curve.arclength[i] + np.linalg.norm(pt - a[i])
            s2 = curve.arclength[j] + np.linalg.norm(pt - a[j])
            return Intersection(float(s1), float(s2), pt)
    return None


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Distance from p to the sub-segment a + tau (b - a), tau in [lo, hi]; inf if empty."""
    d = b - a
    dd = np.maximum((d**2).sum(-1), 1e-300)
    tau = ((p - a) * d).sum(-1) / dd
    tau = np.clip(tau, lo, hi)
    dist = np.linalg.norm(a + tau[..., None] * d - p, axis=-1)
    return np.where(lo <= hi, dist, np.inf)


def min_gap(curve: PlanarCurve, exclusion_arclength: float | None = None) -> float:
    """Smallest distance between curve points more than ``exclusion`` apart in arclength.

    Returns 0 when two admissible segments intersect. Point pairs where one
    point is a node are scanned exactly; for disjoint segments this captures
    the segment-segment distance away from the exclusion boundary.
    """
    seg = curve.segment_lengths
    P = float(seg.sum())
    if exclusion_arclength is None:
        exclusion_arclength = 8.0 * P / len(curve)
    e = float(exclusion_arclength)
    if not e < 0.5 * P:
        raise ValueError("exclusion arclength must be below half the perimeter")
    s = curve.arclength
    a, b = _segment_arrays(curve.nodes)

    # intersecting admissible segment pairs give an exact zero
    mid = s + 0.5 * seg
    sep = np.abs(mid[:, None] - mid[None, :])
    sep = np.minimum(sep, P - sep)
    admissible = sep > e + 0.5 * (seg[:, None] + seg[None, :])
    iu = np.argwhere(np.triu(admissible, 1))
    if iu.size:
        hit = _segments_intersect(a[iu[:, 0]], b[iu[:, 0]], a[iu[:, 1]], b[iu[:, 1]])
        if np.any(hit):
            return 0.0

    # node i against segment j restricted to the admissible arclength window
    off = np.mod(s[None, :] - s[:, None], P)  # start of segment j relative to node i
    L = seg[None, :]
    end = off + L
    lo1 = np.maximum(off, e)
    hi1 = np.minimum(np.minimum(end, P), P - e)
    p = curve.nodes[:, None, :]
    A = a[None, :, :]
    B = b[None, :, :]
    d1 = _point_segment_distance(p, A, B, (lo1 - off) / L, (hi1 - off) / L)
    # wrapped part of a segment that crosses the seam at node i
    wrap = end > P
    lo2 = np.maximum(0.0, e)
    hi2 = np.minimum(end - P, P - e)
    d2 = _point_segment_distance(p, A, B, (lo2 + P - off) / L, (hi2 + P - off) / L)
    d2 = np.where(wrap, d2, np.inf)
    return float(min(d1.min(), d2.min()))


def shift_curve(curve: PlanarCurve, shift: Shift) -> PlanarCurve:
    return PlanarCurve(curve.nodes + shift.vector, diagnostic=curve.diagnostic)


def pullback_curve(curve: PlanarCurve, chart: ConformalChart | None = None) -> PlanarCurve:
    """Nodewise inverse chart; the image is flagged diagnostic (it may cross itself)."""
    return PlanarCurve(apply_P_inv(curve.nodes, chart), diagnostic=True)


def point_polyline_distance(points: np.ndarray, curve: PlanarCurve) -> np.ndarray:
    a, b = _segment_arrays(curve.nodes)
    p = np.asarray(points, dtype=float)[:, None, :]
    zeros = np.zeros((1, len(a)))
    ones = np.ones((1, len(a)))
    return _point_segment_distance(p, a[None], b[None], zeros, ones).min(axis=1)


def hausdorff_distance(c1: PlanarCurve, c2: PlanarCurve) -> float:
    """Symmetric Hausdorff distance, nodes of one curve against segments of the other."""
    return float(max(point_polyline_distance(c1.nodes, c2).max(), point_polyline_distance(c2.nodes, c1).max()))


def discrete_curvature(curve: PlanarCurve) -> np.ndarray:
    """Turning angle at each node divided by the mean adjacent segment length."""
    nodes = curve.nodes
    e_out = np.roll(nodes, -1, axis=0) - nodes
    e_in = nodes - np.roll(nodes, 1, axis=0)
    ang = np.arctan2(_cross(e_in, e_out), (e_in * e_out).sum(-1))
    lengths = 0.5 * (np.linalg.norm(e_in, axis=1) + np.linalg.norm(e_out, axis=1))
    return ang / lengths
