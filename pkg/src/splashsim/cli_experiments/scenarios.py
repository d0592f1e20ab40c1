"""Named geometries and initial data built from run configuration dictionaries.

Two domain families are provided:

``horseshoe``
    annular sector in the tilde plane whose image under the chart is a
    horseshoe with its two straight end faces nearly touching across the cut;
    each face carries a bump stream function with opposite orientation so the
    inner halves of the faces move toward each other.
``mapped_rectangle``
    a rectangle of the original plane, meshed in the tilde plane through the
    chart; the top side carries the stream function. Away from the cut the
    chart is close to affine, which keeps the data well resolved, so this is
    the geometry for convergence studies.
"""

from __future__ import annotations

import numpy as np

from ..conformal_geometry import ConformalChart, apply_P, apply_P_inv
from ..initial_data import (
    F0Template,
    InitialData,
    LineFrame,
    StreamArc,
    TubeCutoff,
    build_stream_function,
    bump,
    polynomial_bump,
    stream_velocity_at,
)
from ..lagrangian_state import Mesh, annular_sector_mesh, mesh_from_template

HORSESHOE_DEFAULTS = {
    "r_inner": 1.0,
    "r_outer": 2.2,
    "half_angle": 0.48 * np.pi,
    "n_radial": 32,
    "n_angular": 64,
    "end_clustering": 1.5,
}

RECTANGLE_DEFAULTS = {
    "origin": [1.0, 1.0],
    "lx": 4.0,
    "ly": 2.0,
    "n1": 32,
    "n2": 32,
}

STREAM_DEFAULTS = {
    "amplitude": 1.0,
    "support": [0.1, 0.75],
    "tube_inner": 2.7,
    "tube_outer": 0.1,
    "curvature_scale": 0.5,
    "samples": 801,
    "profile": "polynomial",
}

PROFILES = {"polynomial": polynomial_bump, "smooth": bump}
DOMAINS = ("horseshoe", "mapped_rectangle", "rectangle", "annular_sector")


def make_chart(spec: dict | None) -> ConformalChart:
    spec = dict(spec or {})
    center = tuple(spec.pop("center", (0.0, 0.0)))
    return ConformalChart(center=center, **spec)


def make_mesh(spec: dict, chart: ConformalChart) -> Mesh:
    spec = dict(spec)
    name = spec.pop("name", "horseshoe")
    if name == "horseshoe":
        p = {**HORSESHOE_DEFAULTS, **spec}
        mesh = annular_sector_mesh(**p)
        mesh.template["name"] = "horseshoe"
        return mesh
    if name == "mapped_rectangle":
        p = {**RECTANGLE_DEFAULTS, **spec}
        ox, oy = p["origin"]
        x = ox + np.linspace(0.0, p["lx"], p["n1"])
        y = oy + np.linspace(0.0, p["ly"], p["n2"])
        nodes = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
        tilde = apply_P(nodes.reshape(-1, 2), chart).reshape(nodes.shape)
        return Mesh(tilde, {"name": "mapped_rectangle", **p})
    return mesh_from_template({"name": name, **spec})


def face_frames(mesh: Mesh) -> list[tuple[LineFrame, float, float]]:
    """Original-plane frames of the straight stream-carrying faces.

    Returns (frame, r at s = 0, dr/ds) per face, where r is the coordinate
    the bump profile is laid out in; every frame has the outward normal as N.
    """
    t = mesh.template
    if t["name"] == "horseshoe":
        r1, r2 = t["r_inner"] ** 2, t["r_outer"] ** 2
        a = 2.0 * t["half_angle"]
        e_up = np.array([np.cos(a), np.sin(a)])
        e_dn = np.array([np.cos(a), -np.sin(a)])
        return [
            (LineFrame(r1 * e_up, r2 * e_up), r1, 1.0),
            (LineFrame(r2 * e_dn, r1 * e_dn), r2, -1.0),
        ]
    if t["name"] == "mapped_rectangle":
        ox, oy = t["origin"]
        top = oy + t["ly"]
        return [(LineFrame(np.array([ox, top]), np.array([ox + t["lx"], top])), 0.0, 1.0)]
    raise ValueError(f"domain {t['name']!r} has no stream-carrying faces")


def stream_arcs(mesh: Mesh, F0: F0Template, stream: dict) -> list[StreamArc]:
    """Bump profiles on the faces with the compatible psi2.

    On the horseshoe the lower face runs inward, so the profile sign flips
    to keep the normal speed d_s psi0 mirror symmetric.
    """
    p = {**STREAM_DEFAULTS, **stream}
    shape = PROFILES[p["profile"]]
    cut = TubeCutoff(p["tube_inner"], p["tube_outer"])
    arcs = []
    for frame, r_start, drds in face_frames(mesh):
        r_end = r_start + drds * frame.length
        lo, hi = min(r_start, r_end), max(r_start, r_end)
        ra = lo + p["support"][0] * (hi - lo)
        rb = lo + p["support"][1] * (hi - lo)
        s = np.linspace(0.0, frame.length, int(p["samples"]))
        r = r_start + drds * s
        psi0 = drds * p["amplitude"] * (rb - ra) * shape((r - ra) / (rb - ra))
        spec = build_stream_function(psi0, s, F0, frame, background=F0.background)
        arcs.append(StreamArc(spec, frame, cut, p["curvature_scale"]))
    return arcs


def build_initial_data(config: dict, shift: np.ndarray | None = None) -> InitialData:
    """Mesh, chart and initial fields from the ``geometry`` and ``initial`` config sections.

    ``shift`` translates the reference nodes in the tilde plane while keeping
    the nodal values of v0 and G0, so the shifted family carries the same
    Lagrangian data on a rigidly moved reference domain.
    """
    geom = config.get("geometry", {})
    init = config.get("initial", {})
    chart = make_chart(geom.get("chart"))
    mesh = make_mesh(geom.get("domain", {"name": "horseshoe"}), chart)
    F0 = F0Template(init.get("F0", "identity"), dict(init.get("F0_params", {})))
    x = apply_P_inv(mesh.points, chart)
    G0 = F0(x)
    kind = init.get("velocity", "stream")
    if kind == "rest":
        v0 = np.zeros((mesh.N, 2))
    elif kind == "stream":
        v0 = F0.background_velocity(x)
        for arc in stream_arcs(mesh, F0, init.get("stream", {})):
            v0 = v0 + stream_velocity_at(arc, x)
    else:
        raise ValueError(f"unknown initial velocity {kind!r}")
    if shift is not None and np.any(shift):
        nodes = mesh.points.reshape(mesh.n1, mesh.n2, 2) + np.asarray(shift, dtype=float)
        mesh = Mesh(nodes, {**mesh.template, "shift": [float(c) for c in shift]})
    return InitialData(mesh, chart, v0, G0)
