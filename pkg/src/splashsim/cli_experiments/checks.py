"""Verification suite: oracle, convergence and scaling checks over all modules.

Each check returns a CheckResult with the measured quantities and the
threshold it was held to. ``run_suite`` runs a selection and is what the
``verify`` subcommand writes out.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from ..conformal_geometry import ConformalChart, apply_P, apply_P_inv, jacobian_JP, jacobian_JP_inv, metric_Q2
from ..initial_data import F0Template, check_compatibility, frame_stress_term, rest_data, stream_velocity_at
from ..lagrangian_state import Mesh, annular_sector_mesh, det2, rectangle_mesh
from ..lagrangian_state import residual_traction as true_traction
from ..norms_diagnostics import NormConfig, NormPlan, embedding_pairs, embedding_ratio, sobolev_Hs, spacetime_Ks, torus_Hs
from ..picard_solver import LinearStokesOperator, WindowConfig, WindowProblem, picard_iterate, solve_linear_L, step_G, trajectory_residuals
from .scenarios import build_initial_data, make_chart, make_mesh, stream_arcs


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    threshold: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.threshold}"

    def as_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def observed_orders(errors, sizes) -> list[float]:
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1}) for consecutive refinements."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(sizes, dtype=float)
    return [float(np.log(e[i] / e[i + 1]) / np.log(h[i] / h[i + 1])) for i in range(len(e) - 1)]


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x; order of the points is irrelevant."""
    order = np.argsort(x)
    lx = np.log(np.asarray(x, dtype=float)[order])
    ly = np.log(np.asarray(y, dtype=float)[order])
    return float(np.polyfit(lx, ly, 1)[0])


# ------------------------------------------------------------- chart


def check_chart(seed: int = 0, n_points: int = 1000, cut_angle: float = 0.3 * np.pi) -> CheckResult:
    """Round trip, Jacobian against complex central differences, and Q^2 = det J."""
    rng = np.random.default_rng(seed)
    chart = ConformalChart(branch_cut_angle=cut_angle, center=(0.2, -0.1))
    z = rng.uniform(-3.0, 3.0, size=(4 * n_points, 2))
    z = z[chart.distance_to_cut(z) > 1e-2][:n_points]
    xt = apply_P(z, chart)
    round_trip = float(np.abs(apply_P_inv(xt, chart) - z).max())

    # J^P at P(z) is dP/dz at z; differentiate P along both real directions
    h = 1e-6
    cols = []
    for e in np.eye(2):
        cols.append((apply_P(z + h * e, chart) - apply_P(z - h * e, chart)) / (2 * h))
    J_fd = np.stack(cols, axis=-1)
    J = jacobian_JP(xt, chart)
    jac_err = float((np.abs(J - J_fd).max(axis=(1, 2)) / np.abs(J).max(axis=(1, 2))).max())
    q2_err = float((np.abs(metric_Q2(xt, chart) - det2(J)) / metric_Q2(xt, chart)).max())
    ok = round_trip <= 1e-10 and jac_err <= 1e-5 and q2_err <= 1e-10
    return CheckResult(
        "chart",
        ok,
        {"round_trip": round_trip, "jacobian_fd": jac_err, "Q2_detJ": q2_err, "points": len(z)},
        "round trip <= 1e-10, J vs FD <= 1e-5, Q^2 vs det J <= 1e-10",
    )


# ------------------------------------------------------------- rest state


def check_rest(n_radial: int = 12, n_angular: int = 24) -> CheckResult:
    chart = ConformalChart()
    mesh = annular_sector_mesh(n_radial, n_angular, 1.0, 2.2, 0.48 * np.pi)
    data = rest_data(mesh, chart)
    window = WindowConfig(T=0.004, dt=0.0005)
    problem = WindowProblem(data, window)
    state, report = picard_iterate(window, data, problem=problem)
    res = trajectory_residuals(state, problem)
    worst = max(res.values())
    ok = report.converged and report.iterations == 1 and worst <= 1e-12
    return CheckResult(
        "rest_fixed_point",
        ok,
        {"iterations": report.iterations, "converged": report.converged, **res},
        "1 iteration, all residuals <= 1e-12",
    )


# ------------------------------------------------------------- manufactured solution


def _mms_fields(mesh: Mesh, chart: ConformalChart, times: np.ndarray, kind: str):
    """Exact (v, q) and the data (f, g, h) making them solve the linear system."""
    x, y = mesh.points.T
    J = jacobian_JP(mesh.points, chart)
    Q2 = metric_Q2(mesh.points, chart)
    if kind == "space":
        amp, damp = (lambda t: 1.0 + t), (lambda t: 1.0)
        V = np.c_[np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)]
        LV = -2.0 * V
        GV = np.stack([np.c_[np.cos(x) * np.cos(y), -np.sin(x) * np.sin(y)], np.c_[np.sin(x) * np.sin(y), -np.cos(x) * np.cos(y)]], 1)
        Qf = np.sin(x + 2 * y)
        GQ = np.c_[np.cos(x + 2 * y), 2 * np.cos(x + 2 * y)]
    else:
        # quadratic in space, so the spatial stencils are exact and only the time error remains
        amp = damp = np.exp
        V = np.c_[x * x + y, -2 * x * y + x]
        LV = np.c_[2.0 + 0 * x, 0 * x]
        GV = np.stack([np.c_[2 * x, np.ones_like(x)], np.c_[-2 * y + 1, -2 * x]], 1)
        Qf = x + y * y
        GQ = np.c_[np.ones_like(x), 2 * y]
    b = mesh.boundary
    m0 = np.einsum("nij,nj->ni", jacobian_JP_inv(mesh.points[b], chart), mesh.boundary_normals)
    f, g, h, vs, qs = [], [], [], [], []
    for t in times:
        a = amp(t)
        A = a * np.einsum("nik,nkj->nij", GV, J)
        f.append(damp(t) * V - a * Q2[:, None] * LV + a * np.einsum("nki,nk->ni", J, GQ))
        g.append(np.trace(A, axis1=1, axis2=2))
        S = A[b] + np.swapaxes(A[b], 1, 2) - a * Qf[b, None, None] * np.eye(2)
        h.append(np.einsum("nij,nj->ni", S, m0))
        vs.append(a * V)
        qs.append(a * Qf)
    return np.array(f), np.array(g), np.array(h), np.array(vs), np.array(qs)


def mms_error(n: int, steps: int, kind: str, T: float = 0.5) -> float:
    """Max velocity error of solve_linear_L against a manufactured solution, sqrt chart."""
    chart = ConformalChart()
    mesh = rectangle_mesh(n, n, 1.0, 1.0, origin=(1.0, 0.5))
    times = np.linspace(0.0, T, steps + 1)
    op = LinearStokesOperator(mesh, chart, T / steps)
    f, g, h, vs, qs = _mms_fields(mesh, chart, times, kind)
    v, q = solve_linear_L(f, g, h, vs[0], op)
    return float(np.abs(v - vs).max())


def check_manufactured(grids=(9, 17, 33), steps=(4, 8, 16)) -> CheckResult:
    e_h = [mms_error(n, 4, "space") for n in grids]
    e_t = [mms_error(9, k, "time") for k in steps]
    o_h = observed_orders(e_h, [1.0 / (n - 1) for n in grids])
    o_t = observed_orders(e_t, [1.0 / k for k in steps])
    ok = min(o_h) >= 1.8 and min(o_t) >= 1.0
    return CheckResult(
        "manufactured_solution",
        ok,
        {"errors_h": e_h, "orders_h": o_h, "errors_dt": e_t, "orders_dt": o_t},
        "order >= 1.8 in h and >= 1 in dt",
    )


# ------------------------------------------------------------- oracles


def check_dense_oracle(n: int = 12, seed: int = 0) -> CheckResult:
    """Sparse level solves against dense LU on a small curved mesh."""
    rng = np.random.default_rng(seed)
    chart = ConformalChart()
    mesh = annular_sector_mesh(n, n, 1.0, 2.0, 0.4 * np.pi)
    op = LinearStokesOperator(mesh, chart, 0.01)
    worst = 0.0
    for _ in range(3):
        rhs = rng.standard_normal(3 * mesh.N)
        v1, q1 = op.solve_level(rhs)
        sol = sla.lu_solve(sla.lu_factor(op.matrix.toarray()), rhs)
        v2 = np.stack([sol[: mesh.N], sol[mesh.N : 2 * mesh.N]], axis=-1)
        q2 = sol[2 * mesh.N :]
        scale = max(np.abs(v2).max(), np.abs(q2).max())
        worst = max(worst, max(np.abs(v1 - v2).max(), np.abs(q1 - q2).max()) / scale)
    return CheckResult("dense_oracle", worst <= 1e-9, {"relative_difference": worst}, "sparse vs dense LU <= 1e-9")


def step_G_error(steps: int, T: float = 0.5) -> float:
    """step_G iterated to its fixed point for v = A X, against exp(tA) G0."""
    A = np.array([[0.3, 1.1], [-0.7, -0.3]])
    G0 = np.array([[1.0, 0.4], [0.0, 1.0]])
    chart = ConformalChart(kind="identity")
    mesh = rectangle_mesh(5, 5)
    times = np.linspace(0.0, T, steps + 1)
    flows = np.stack([sla.expm(t * A) for t in times])
    X = np.einsum("kij,nj->kni", flows, mesh.points)
    v = np.einsum("ij,knj->kni", A, X)
    G0n = np.broadcast_to(G0, (mesh.N, 2, 2)).copy()
    G = np.broadcast_to(G0n, (len(times),) + G0n.shape).copy()
    for _ in range(200):
        G_new = step_G(v, X, G, G0n, mesh, chart, T / steps)
        done = np.abs(G_new - G).max() < 1e-15
        G = G_new
        if done:
            break
    exact = np.einsum("kij,jl->kil", flows, G0)
    return float(np.abs(G - exact[:, None]).max())


def check_step_G(steps=(8, 16, 32)) -> CheckResult:
    errs = [step_G_error(k) for k in steps]
    orders = observed_orders(errs, [1.0 / k for k in steps])
    return CheckResult("step_G_exponential", min(orders) >= 1.8, {"errors": errs, "orders": orders}, "order >= 1.8 against exp(tA) G0")


# ------------------------------------------------------------- det G


def detG_run(config: dict, n: int, dt: float, T: float) -> tuple[float, float]:
    cfg = {**config, "geometry": {**config.get("geometry", {}), "domain": {**config["geometry"]["domain"], "n1": n, "n2": n}}}
    data = build_initial_data(cfg)
    window = WindowConfig(T=T, dt=dt, tol=1e-10, rtol=1e-11)
    state, report = picard_iterate(window, data)
    if not report.converged:
        raise RuntimeError(f"no convergence at n={n}, dt={dt}")
    return float(np.abs(det2(state.G) - 1.0).max()), data.mesh.h_max


def check_detG(config: dict, levels=((16, 0.002), (24, 0.001), (32, 0.0005)), T: float = 0.004, bound: float = 5.0) -> CheckResult:
    """max |det G - 1| against dt^2 + h^2 with the coefficient fitted over the levels."""
    errs, scales = [], []
    for n, dt in levels:
        e, h = detG_run(config, n, dt, T)
        errs.append(e)
        scales.append(dt**2 + h**2)
    coeffs = [e / s for e, s in zip(errs, scales)]
    fitted = float(np.dot(errs, scales) / np.dot(scales, scales))
    ok = max(coeffs) <= bound
    return CheckResult(
        "detG_conservation",
        ok,
        {"errors": errs, "dt2_plus_h2": scales, "coefficients": coeffs, "fitted_coefficient": fitted},
        f"max |det G - 1| <= {bound} (dt^2 + h^2) at every level",
    )


# ------------------------------------------------------------- contraction


def contraction_ratios(config: dict, windows=(0.008, 0.004, 0.002), substeps: int = 8) -> list[float]:
    data = build_initial_data(config)
    out = []
    for T in windows:
        _, rep = picard_iterate(WindowConfig(T=T, dt=T / substeps, max_iters=30, tol=1e-12, rtol=1e-13), data)
        out.append(rep.contraction())
    return out


def check_contraction(config: dict, T0: float = 0.008) -> CheckResult:
    Ts = [T0, T0 / 2, T0 / 4]
    r = contraction_ratios(config, Ts)
    delta = loglog_slope(Ts, r)
    ok = r[0] < 1.0 and r[1] <= r[0] + 0.05 and delta > 0.0
    return CheckResult(
        "contraction",
        ok,
        {"windows": Ts, "ratios": r, "fitted_exponent": delta},
        "r(T0) < 1, r(T0/2) <= r(T0) + 0.05, fitted exponent > 0",
    )


# ------------------------------------------------------------- compatibility

COMPAT_F0 = {
    "identity": ("identity", {}),
    "shear": ("shear", {"c": 0.3}),
    "twist": ("twist", {"center": [3.0, 3.0], "radius": 1.0, "amplitude": 0.3}),
}

COMPAT_STREAM = {"amplitude": 1.0, "support": [0.1, 0.9], "tube_inner": 2.0, "tube_outer": 1.0, "curvature_scale": 0.3}


def compatibility_residuals(name: str, grids=(32, 48, 64)) -> tuple[list[dict], float]:
    """Residuals on the mapped rectangle per grid, and the algebraic psi2 residual."""
    template, params = COMPAT_F0[name]
    F0 = F0Template(template, params)
    chart = make_chart(None)
    reports = []
    algebraic = 0.0
    for n in grids:
        mesh = make_mesh({"name": "mapped_rectangle", "n1": n, "n2": n}, chart)
        arcs = stream_arcs(mesh, F0, COMPAT_STREAM)
        x = apply_P_inv(mesh.points, chart)
        u = F0.background_velocity(x)
        for arc in arcs:
            u = u + stream_velocity_at(arc, x)
        reports.append(check_compatibility(u, F0(x), mesh, chart).as_dict())
        for arc in arcs:
            stress = frame_stress_term(arc.frame, arc.spec.s, F0, F0.background)
            res = arc.spec.newcomp_residual(arc.frame, stress)
            algebraic = max(algebraic, float(np.abs(res).max() / max(1.0, np.abs(arc.spec.psi2).max())))
    return reports, algebraic


def check_compatibility_orders(grids=(32, 48, 64), floor: float = 1e-10) -> CheckResult:
    """Residual orders in h for every built-in F0; residuals below ``floor`` count as exact."""
    metrics, ok = {}, True
    sizes = [1.0 / (n - 1) for n in grids]
    for name in COMPAT_F0:
        reports, algebraic = compatibility_residuals(name, grids)
        entry = {"psi2_condition": algebraic}
        ok &= algebraic <= 1e-10
        for key in ("div_u", "div_F", "det_F", "tangential_traction"):
            vals = [r[key] for r in reports]
            if max(vals) <= floor:
                entry[key] = {"values": vals, "orders": "exact"}
                continue
            orders = observed_orders(vals, sizes)
            entry[key] = {"values": vals, "orders": orders}
            ok &= min(orders) >= 1.8
        metrics[name] = entry
    return CheckResult("compatibility", bool(ok), metrics, "order >= 1.8 in h for each residual, psi2 condition <= 1e-10")


# ------------------------------------------------------------- norms


def _smooth_corpus(mesh: Mesh, times: np.ndarray, count: int, seed: int) -> list[np.ndarray]:
    """Random low-mode trajectories vanishing at t = 0 (the F norm weights t^-1/4)."""
    rng = np.random.default_rng(seed)
    x, y = mesh.points.T
    out = []
    for _ in range(count):
        k1, k2 = rng.integers(1, 3, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        w = rng.uniform(1.0, 3.0)
        space = np.sin(k1 * x + ph[0]) * np.cos(k2 * y + ph[1])
        time_part = np.sin(w * times) * np.exp(-times)
        out.append(time_part[:, None] * space[None])
    return out


def check_norms(seed: int = 0, s: float = 2.25, resolutions=((33, 17), (65, 33))) -> CheckResult:
    """Norm axioms, the single-mode closed form, and embedding ratios under doubling.

    ``resolutions`` lists (nodes per side, time levels); the coarsest grids
    are still pre-asymptotic for the H^{s+1} part of the F norm.
    """
    rng = np.random.default_rng(seed)
    mesh = rectangle_mesh(17, 17)
    times = np.linspace(0.0, 0.5, 9)
    plan = NormPlan(mesh, times, NormConfig(s=s))

    homog, tri = 0.0, -np.inf
    for _ in range(5):
        f, g = rng.standard_normal((2, mesh.N))
        c = rng.uniform(-3, 3)
        nf, ng = sobolev_Hs(f, s, mesh, plan), sobolev_Hs(g, s, mesh, plan)
        homog = max(homog, abs(sobolev_Hs(c * f, s, mesh, plan) - abs(c) * nf) / (abs(c) * nf))
        tri = max(tri, (sobolev_Hs(f + g, s, mesh, plan) - nf - ng) / (nf + ng))
        F, G = rng.standard_normal((2, len(times), mesh.N))
        nF, nG = spacetime_Ks(F, s, plan), spacetime_Ks(G, s, plan)
        homog = max(homog, abs(spacetime_Ks(c * F, s, plan) - abs(c) * nF) / (abs(c) * nF))
        tri = max(tri, (spacetime_Ks(F + G, s, plan) - nF - nG) / (nF + nG))

    n = 64
    theta = 2 * np.pi * np.arange(n) / n
    mode_1d = torus_Hs(np.exp(1j * theta), 2 * np.pi, s)
    _, ty = np.meshgrid(theta, theta, indexing="ij")
    mode_2d = torus_Hs(np.exp(1j * ty), [2 * np.pi, 2 * np.pi], s)
    mode_err = max(abs(mode_1d - 2 ** (s / 2)), abs(mode_2d - 2 ** (s / 2)))

    ratios = {}
    drift = 0.0
    for pair in embedding_pairs(s):
        vals = []
        for m, k in resolutions:
            msh = rectangle_mesh(m, m)
            ts = np.linspace(0.0, 0.5, k)
            pl = NormPlan(msh, ts, NormConfig(s=s))
            vals.append(np.array(embedding_ratio(_smooth_corpus(msh, ts, 4, seed), pair, pl)))
        rel = np.abs(vals[1] / vals[0] - 1.0)
        finite = bool(np.all(np.isfinite(vals[0])) and np.all(np.isfinite(vals[1])))
        drift = max(drift, float(rel.max()) if finite else np.inf)
        ratios[pair] = {"coarse": vals[0], "fine": vals[1]}
    ok = homog <= 1e-10 and tri <= 1e-10 and mode_err <= 1e-6 and drift <= 0.2
    return CheckResult(
        "norms",
        ok,
        {"homogeneity": homog, "triangle_excess": tri, "single_mode_error": mode_err, "embedding_drift": drift, "embedding_ratios": ratios},
        "homogeneity and triangle <= 1e-10, single mode <= 1e-6, embedding drift <= 20%",
    )


# ------------------------------------------------------------- traction of a converged window


def check_traction(config: dict, tol: float = 1e-6) -> CheckResult:
    """Nonlinear traction of a converged window, evaluated independently of the assembly."""
    data = build_initial_data(config)
    window = WindowConfig(T=0.004, dt=0.001, tol=1e-10, rtol=1e-11)
    state, report = picard_iterate(window, data)
    worst = 0.0
    # level 0 is the initial data, which carries the compatibility residual
    for k in range(1, len(state.times)):
        r = true_traction(state.v[k], state.q[k], state.G[k], state.X[k], data.mesh, data.chart)
        worst = max(worst, float(np.abs(r).max()))
    ok = report.converged and worst <= tol
    return CheckResult("traction", ok, {"converged": report.converged, "max_traction": worst}, f"converged and traction <= {tol:g}")


# ------------------------------------------------------------- suite


def traction_config() -> dict:
    """Patch geometry with a sheared F0, so the elastic part of the traction is nonzero."""
    return {
        "geometry": {"domain": {"name": "mapped_rectangle", "n1": 16, "n2": 16}},
        "initial": {"velocity": "stream", "stream": dict(COMPAT_STREAM), "F0": "shear", "F0_params": {"c": 0.3}},
    }


def patch_config(n: int = 24) -> dict:
    return {
        "geometry": {"domain": {"name": "mapped_rectangle", "n1": n, "n2": n}},
        "initial": {"velocity": "stream", "stream": dict(COMPAT_STREAM), "F0": "identity"},
    }


def default_suite(seed: int = 0, splash_config: dict | None = None) -> dict[str, Callable[[], CheckResult]]:
    splash_config = splash_config or {}
    return {
        "chart": lambda: check_chart(seed),
        "rest_fixed_point": check_rest,
        "manufactured_solution": check_manufactured,
        "dense_oracle": lambda: check_dense_oracle(seed=seed),
        "step_G_exponential": check_step_G,
        "detG_conservation": lambda: check_detG(patch_config()),
        "contraction": lambda: check_contraction(splash_config),
        "compatibility": check_compatibility_orders,
        "norms": lambda: check_norms(seed),
        "traction": lambda: check_traction(traction_config()),
    }


def run_suite(suite: dict[str, Callable[[], CheckResult]], only: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name, fn in suite.items():
        if only and name not in only:
            continue
        t = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failed check, reported with its error
            res = CheckResult(name, False, {"error": f"{type(exc).__name__}: {exc}"}, "completed without error")
        res.seconds = time.perf_counter() - t
        results.append(res)
    return results
