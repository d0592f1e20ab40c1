"""Space-time Picard iteration around a linear Stokes-type evolution operator.

One iterate is a whole trajectory on [0, T]. Each sweep updates the flow
map X and the deformation gradient G by trapezoidal quadrature, collects
every nonlinear term into data (f, g, h), and solves the frozen-coefficient
linear system for the shifted velocity w = v - phi and its pressure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conformal_geometry import (
    ConformalChart,
    PlanarCurve,
    apply_JP,
    jacobian_JP,
    jacobian_JP_inv,
    metric_Q2,
    pullback_curve,
)
from .initial_data import InitialData
from .lagrangian_state import (
    DET_HEALTH_BOUND,
    Mesh,
    SingularDeformationError,
    TrajectoryState,
    det2,
    elastic_force,
    gradient,
    lagrangian_laplacian,
    laplacian,
    residual_traction,
    spatial_velocity_gradient,
    zeta,
)
from .norms_diagnostics import NormConfig, NormPlan, composite_norm

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonConvergenceError(SolverError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    T: float = 0.05
    dt: float = 0.00625
    max_iters: int = 30
    tol: float = 1e-8
    rtol: float = 1e-9
    relaxation: float = 1.0
    stabilization: float = 0.25
    min_T: float | None = None

    def __post_init__(self):
        if not 0 < self.dt <= self.T + 1e-15:
            raise ValueError("need 0 < dt <= T")
        if self.tol <= 0 or self.rtol < 0:
            raise ValueError("tolerances must be positive")
        if not 0.5 <= self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in [0.5, 1]")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)


@dataclass
class IterationReport:
    differences: list[dict] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def record(self, parts: dict) -> None:
        if self.differences:
            prev = self.differences[-1]["total"]
            self.ratios.append(parts["total"] / prev if prev > 0 else 0.0)
        self.differences.append(parts)
        self.iterations = len(self.differences)

    def contraction(self, rel_floor: float = 1e-7, abs_floor: float = 1e-11) -> float:
        """Mean per-iteration reduction of the successive differences.

        Uses the geometric mean from the second difference to the last one
        above max(abs_floor, rel_floor * first difference); past that point
        the differences are dominated by round-off in the high-order norms.
        The first ratio is skipped because the first difference also carries
        the distance of the starting guess from the iteration's range.
        """
        d = [x["total"] for x in self.differences]
        if len(d) < 2 or d[0] <= 0:
            return 0.0
        floor = max(abs_floor, rel_floor * d[0])
        last = max((k for k in range(len(d)) if d[k] > floor), default=0)
        if last < 1:
            return 0.0
        start = 1 if last >= 2 else 0
        return float((d[last] / d[start]) ** (1.0 / (last - start)))

    def rows(self) -> list[dict]:
        out = []
        for n, d in enumerate(self.differences):
            row = {"iteration": n + 1, **d, "ratio": self.ratios[n - 1] if n > 0 else float("nan")}
            out.append(row)
        return out


# ------------------------------------------------------------- quadratures


def _cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * dt * (values[1:] + values[:-1]), axis=0)
    return out


def step_X(v: np.ndarray, X: np.ndarray, mesh: Mesh, chart: ConformalChart, dt: float) -> np.ndarray:
    """alpha + int_0^t J(X) v, trapezoidal in time."""
    for k, xk in enumerate(X):
        chart.check_tilde_points(xk, f"flow map at level {k}")
    integrand = np.stack([apply_JP(X[k], v[k], chart) for k in range(len(X))])
    return mesh.points[None] + _cumulative_trapezoid(integrand, dt)


def step_G(v: np.ndarray, X: np.ndarray, G: np.ndarray, G0: np.ndarray, mesh: Mesh, chart: ConformalChart, dt: float) -> np.ndarray:
    """G0 + int_0^t (grad v zeta J(X)) G, trapezoidal in time."""
    integrand = np.stack(
        [np.einsum("nij,njk->nik", spatial_velocity_gradient(v[k], X[k], mesh, chart), G[k]) for k in range(len(X))]
    )
    return G0[None] + _cumulative_trapezoid(integrand, dt)


# ------------------------------------------------------------- linear operator


class LinearStokesOperator:
    """Backward-Euler saddle system with coefficients frozen at the labels.

    Unknown layout per level: [v1 (N), v2 (N), q (N)]. Interior nodes carry
    the momentum rows, boundary nodes carry the linear traction rows, and
    every node carries the trace constraint. The constraint includes the
    pressure term beta * (D.D - Lap_compact) q, which is O(h^4) on smooth
    pressures and removes the checkerboard null mode of collocated grids.
    """

    def __init__(self, mesh: Mesh, chart: ConformalChart, dt: float, stabilization: float = 0.25):
        self.mesh, self.chart, self.dt = mesh, chart, dt
        N = mesh.N
        X = mesh.points
        self.J = jacobian_JP(X, chart)
        self.Q2 = metric_Q2(X, chart)
        b = mesh.boundary
        self.m0 = np.einsum("nij,nj->ni", jacobian_JP_inv(X[b], chart), mesh.boundary_normals)
        self.beta = stabilization * mesh.h**2
        D = mesh.D
        diag = sp.diags

        # E[a] = sum_k J_ka D_k, so Tr(grad v J) = sum_a E[a] v_a and (J^T grad q)_a = E[a] q
        E = [sum(diag(self.J[:, k, a]) @ D[k] for k in range(2)).tocsr() for a in range(2)]
        self.E = E
        dd = (D[0] @ D[0] + D[1] @ D[1]).tocsr()
        self.stab = (self.beta * (dd - mesh.laplacian)).tocsr()

        heat = (sp.identity(N) / dt - diag(self.Q2) @ mesh.laplacian).tocsr()
        interior = np.zeros(N)
        interior[mesh.interior] = 1.0
        P_int = diag(interior)

        # traction rows embedded at boundary node positions
        Jm = np.einsum("nkb,nb->nk", self.J[b], self.m0)
        Sel = sp.csr_matrix((np.ones(len(b)), (b, b)), shape=(N, N))
        Dm = sum(diag(self._scatter(Jm[:, k])) @ D[k] for k in range(2))
        blocks = [[None, None, None], [None, None, None], [None, None, None]]
        for a in range(2):
            for c in range(2):
                tr = diag(self._scatter(self.m0[:, c])) @ E[a]
                if a == c:
                    tr = tr + Dm
                mom = P_int @ heat if a == c else sp.csr_matrix((N, N))
                blocks[a][c] = (mom + Sel @ tr).tocsr()
            blocks[a][2] = (P_int @ E[a] - diag(self._scatter(self.m0[:, a]))).tocsr()
        blocks[2][0], blocks[2][1], blocks[2][2] = E[0], E[1], self.stab
        self.matrix = sp.bmat(blocks, format="csc")
        self._lu = spla.splu(self.matrix)

    def _scatter(self, boundary_values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.mesh.N)
        out[self.mesh.boundary] = boundary_values
        return out

    # ---- pieces of the operator, used when assembling data

    def momentum(self, v: np.ndarray, q: np.ndarray) -> np.ndarray:
        """-Q^2 Lap v + J^T grad q (without the time derivative)."""
        Jg = np.stack([self.E[a] @ q for a in range(2)], axis=-1)
        return -self.Q2[:, None] * laplacian(v, self.mesh) + Jg

    def trace(self, v: np.ndarray) -> np.ndarray:
        return self.E[0] @ v[:, 0] + self.E[1] @ v[:, 1]

    def traction(self, v: np.ndarray, q: np.ndarray) -> np.ndarray:
        b = self.mesh.boundary
        A = np.einsum("nik,nkj->nij", gradient(v, self.mesh)[b], self.J[b])
        S = A + np.swapaxes(A, 1, 2) - q[b, None, None] * np.eye(2)
        return np.einsum("nij,nj->ni", S, self.m0)

    def rhs_vector(self, f: np.ndarray, g: np.ndarray, h: np.ndarray, v_prev: np.ndarray) -> np.ndarray:
        N = self.mesh.N
        mom = f + v_prev / self.dt
        rhs = np.zeros(3 * N)
        for a in range(2):
            r = mom[:, a].copy()
            r[self.mesh.boundary] = h[:, a]
            rhs[a * N : (a + 1) * N] = r
        rhs[2 * N :] = g
        return rhs

    def solve_level(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sol = self._lu.solve(rhs)
        res = np.linalg.norm(self.matrix @ sol - rhs) / max(1.0, np.linalg.norm(rhs))
        if not np.isfinite(res) or res > 1e-8:
            raise SolverError(f"saddle solve residual {res:.2e}")
        N = self.mesh.N
        return np.stack([sol[:N], sol[N : 2 * N]], axis=-1), sol[2 * N :]

    def dense_solve_level(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sol = sla.lu_solve(sla.lu_factor(self.matrix.toarray()), rhs)
        N = self.mesh.N
        return np.stack([sol[:N], sol[N : 2 * N]], axis=-1), sol[2 * N :]


def solve_linear_L(
    f: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    v0: np.ndarray,
    op: LinearStokesOperator,
    q0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """March the linear system over all levels; level 0 holds (v0, q0)."""
    K1 = f.shape[0]
    v = np.zeros((K1,) + v0.shape)
    q = np.zeros((K1, op.mesh.N))
    v[0] = v0
    if q0 is not None:
        q[0] = q0
    for k in range(1, K1):
        rhs = op.rhs_vector(f[k], g[k], h[k], v[k - 1])
        v[k], q[k] = op.solve_level(rhs)
    return v, q


# ------------------------------------------------------------- nonlinear terms


@dataclass
class WindowProblem:
    """Frozen pieces of one window: mesh, chart, initial data, phi and the linear operator."""

    data: InitialData
    window: WindowConfig
    op: LinearStokesOperator = None
    times: np.ndarray = None
    phi: np.ndarray = None
    dphi: np.ndarray = None

    def __post_init__(self):
        self.times = self.window.times()
        dt = float(self.times[1] - self.times[0])
        if self.op is None:
            self.op = LinearStokesOperator(self.data.mesh, self.data.chart, dt, self.window.stabilization)
        self.phi = self.data.phi(self.times)
        # backward difference consistent with the implicit stepping
        self.dphi = np.empty_like(self.phi)
        self.dphi[1:] = np.diff(self.phi, axis=0) / dt
        self.dphi[0] = self.data.acceleration

    @property
    def mesh(self) -> Mesh:
        return self.data.mesh

    @property
    def chart(self) -> ConformalChart:
        return self.data.chart

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def nonlinear_momentum(v, q, G, X, mesh: Mesh, chart: ConformalChart) -> np.ndarray:
    """Q^2(X) Lap_X v - J(X)^T zeta^T grad q + elastic force."""
    Q2X = metric_Q2(X, chart)
    z = zeta(X, mesh)
    JX = jacobian_JP(X, chart)
    grad_q = np.einsum("nki,nlk,nl->ni", JX, z, gradient(q, mesh))
    return Q2X[:, None] * lagrangian_laplacian(v, X, mesh) - grad_q + elastic_force(G, X, mesh, chart)


def assemble_rhs(w, qw, X, G, problem: WindowProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Data (f, g, h) of the linear system for the next iterate, at every level."""
    op, mesh, chart = problem.op, problem.mesh, problem.chart
    K1 = w.shape[0]
    f = np.zeros_like(w)
    g = np.zeros((K1, mesh.N))
    h = np.zeros((K1, mesh.Nb, 2))
    qphi = problem.data.q_phi
    stab_qphi = op.stab @ qphi
    for k in range(K1):
        v = w[k] + problem.phi[k]
        q = qw[k] + qphi
        f[k] = op.momentum(w[k], qw[k]) + nonlinear_momentum(v, q, G[k], X[k], mesh, chart) - problem.dphi[k]
        div_X = np.trace(spatial_velocity_gradient(v, X[k], mesh, chart), axis1=1, axis2=2)
        g[k] = op.trace(w[k]) - div_X - stab_qphi
        h[k] = op.traction(w[k], qw[k]) - residual_traction(v, q, G[k], X[k], mesh, chart)
    return f, g, h


# ------------------------------------------------------------- iteration


def _health_check(X: np.ndarray, mesh: Mesh, chart: ConformalChart) -> None:
    for k, xk in enumerate(X):
        chart.check_tilde_points(xk, f"flow map at level {k}")
        d = det2(gradient(xk, mesh))
        if np.any(d <= DET_HEALTH_BOUND):
            n = int(np.argmin(d))
            raise SingularDeformationError(f"det grad X = {d[n]:.3e} at node {n}, level {k}")


def phi_flow(problem: WindowProblem) -> np.ndarray:
    """Flow map of phi by Heun steps, the starting guess for X."""
    X = np.empty_like(problem.phi)
    X[0] = problem.mesh.points
    dt, chart = problem.dt, problem.chart
    for k in range(len(X) - 1):
        a = apply_JP(X[k], problem.phi[k], chart)
        pred = X[k] + dt * a
        X[k + 1] = X[k] + 0.5 * dt * (a + apply_JP(pred, problem.phi[k + 1], chart))
    return X


def picard_iterate(
    window: WindowConfig,
    data: InitialData,
    norm_config: NormConfig | None = None,
    start: str = "phi",
    problem: WindowProblem | None = None,
    raise_on_failure: bool = False,
) -> tuple[TrajectoryState, IterationReport]:
    """Fixed-point iteration on one window.

    ``start="phi"`` begins from w = 0 with X following the phi flow;
    ``start="zero"`` begins from w = 0 with X at the labels.
    """
    problem = problem or WindowProblem(data, window)
    mesh, chart = problem.mesh, problem.chart
    times, dt = problem.times, problem.dt
    K1 = len(times)
    plan = NormPlan(mesh, times, norm_config)

    w = np.zeros((K1, mesh.N, 2))
    qw = np.zeros((K1, mesh.N))
    G = np.broadcast_to(data.G0, (K1,) + data.G0.shape).copy()
    X = phi_flow(problem) if start == "phi" else np.broadcast_to(mesh.points, (K1, mesh.N, 2)).copy()
    if start not in ("phi", "zero"):
        raise ValueError(f"unknown start {start!r}")
    report = IterationReport()
    omega = window.relaxation
    for it in range(window.max_iters):
        v = w + problem.phi
        X_new = step_X(v, X, mesh, chart, dt)
        G_new = step_G(v, X, G, data.G0, mesh, chart, dt)
        f, g, h = assemble_rhs(w, qw, X, G, problem)
        w_new, qw_new = solve_linear_L(f, g, h, np.zeros((mesh.N, 2)), problem.op)
        if omega != 1.0:
            w_new = omega * w_new + (1 - omega) * w
            qw_new = omega * qw_new + (1 - omega) * qw
            X_new = omega * X_new + (1 - omega) * X
            G_new = omega * G_new + (1 - omega) * G
        parts = composite_norm(w_new - w, qw_new - qw, X_new - X, G_new - G, plan)
        report.record(parts)
        w, qw, X, G = w_new, qw_new, X_new, G_new
        log.debug("iteration %d: %s", it + 1, parts)
        if not np.isfinite(parts["total"]):
            break
        _health_check(X, mesh, chart)
        if parts["total"] < window.tol or parts["total"] < window.rtol * report.differences[0]["total"]:
            report.converged = True
            break
        if len(report.ratios) >= 3 and min(report.ratios[-3:]) > 1.0 and parts["total"] > 1e3:
            break
    state = TrajectoryState(times, X, w + problem.phi, qw + data.q_phi[None], G)
    if raise_on_failure and not report.converged:
        raise NonConvergenceError(f"no convergence in {report.iterations} iterations")
    return state, report


# ------------------------------------------------------------- residuals


def trajectory_residuals(state: TrajectoryState, problem: WindowProblem) -> dict[str, float]:
    """Max nodal residuals of the discrete nonlinear system along a trajectory.

    Level 0 holds the initial data, whose residuals are the compatibility
    residuals of the data, so the constraint residuals run over the solved
    levels only.
    """
    mesh, chart, op = problem.mesh, problem.chart, problem.op
    dt = problem.dt
    X, v, q, G = state.X, state.v, state.q, state.G
    mom, inc, inc_raw, trac = 0.0, 0.0, 0.0, 0.0
    for k in range(1, len(state.times)):
        div = np.trace(spatial_velocity_gradient(v[k], X[k], mesh, chart), axis1=1, axis2=2)
        inc_raw = max(inc_raw, np.abs(div).max())
        inc = max(inc, np.abs(div + op.stab @ q[k]).max())
        trac = max(trac, np.abs(residual_traction(v[k], q[k], G[k], X[k], mesh, chart)).max())
        r = (v[k] - v[k - 1]) / dt - nonlinear_momentum(v[k], q[k], G[k], X[k], mesh, chart)
        mom = max(mom, np.abs(r[mesh.interior]).max())
    x_res = np.abs(step_X(v, X, mesh, chart, dt) - X).max()
    g_res = np.abs(step_G(v, X, G, G[0], mesh, chart, dt) - G).max()
    return {
        "momentum": float(mom),
        "incompressibility": float(inc),
        "incompressibility_raw": float(inc_raw),
        "traction": float(trac),
        "flow_map": float(x_res),
        "deformation": float(g_res),
        "detG": float(np.abs(det2(G) - 1.0).max()),
    }


# ------------------------------------------------------------- marching


@dataclass
class MarchResult:
    times: list[float] = field(default_factory=list)
    tilde_curves: list[PlanarCurve] = field(default_factory=list)
    curves: list[PlanarCurve] = field(default_factory=list)
    windows: list[TrajectoryState] = field(default_factory=list)
    meshes: list[Mesh] = field(default_factory=list)
    reports: list[IterationReport] = field(default_factory=list)
    residuals: list[dict] = field(default_factory=list)
    compatibility: list[dict] = field(default_factory=list)
    termination: str = "horizon"

    def append_levels(self, state: TrajectoryState, mesh: Mesh, chart: ConformalChart, t0: float, skip_first: bool) -> None:
        for k in range(1 if skip_first else 0, len(state.times)):
            tilde = mesh.boundary_curve(state.X[k])
            self.times.append(t0 + float(state.times[k]))
            self.tilde_curves.append(tilde)
            self.curves.append(pullback_curve(tilde, chart))


def rebase(state: TrajectoryState, mesh: Mesh, chart: ConformalChart) -> InitialData:
    """New reference domain at the end of a window: nodes X(T), data v(T), G(T)."""
    new_mesh = Mesh(state.X[-1].reshape(mesh.n1, mesh.n2, 2), {**mesh.template, "rebased": True})
    return InitialData(new_mesh, chart, state.v[-1].copy(), state.G[-1].copy())


def march(
    horizon: float,
    window: WindowConfig,
    data: InitialData,
    norm_config: NormConfig | None = None,
    stop: Callable[[float, PlanarCurve], str | None] | None = None,
    compat_tol: float = 1e-1,
) -> MarchResult:
    """Chain windows up to ``horizon``; ``stop(t, pulled_back_curve)`` may end the run early."""
    result = MarchResult()
    t0 = 0.0
    first = True
    current = window
    min_T = window.min_T if window.min_T is not None else window.T / 8
    while t0 < horizon - 1e-12:
        T = min(current.T, horizon - t0)
        win = replace(current, T=T, dt=min(current.dt, T), min_T=None)
        try:
            problem = WindowProblem(data, win)
            state, report = picard_iterate(win, data, norm_config, problem=problem)
        except (SingularDeformationError, SolverError, ValueError) as exc:
            log.warning("window at t=%.4f failed: %s", t0, exc)
            state, report = None, None
        if report is None or not report.converged:
            if current.T / 2 < min_T:
                result.termination = "nonconvergence"
                break
            current = replace(current, T=current.T / 2, dt=current.dt / 2)
            continue
        result.windows.append(state)
        result.meshes.append(data.mesh)
        result.reports.append(report)
        result.residuals.append(trajectory_residuals(state, problem))
        n_before = len(result.times)
        result.append_levels(state, data.mesh, data.chart, t0, skip_first=not first)
        first = False
        t0 += T
        if stop is not None:
            reason = None
            for t, c in zip(result.times[n_before:], result.curves[n_before:]):
                reason = stop(t, c)
                if reason:
                    break
            if reason:
                result.termination = reason
                break
        try:
            data = rebase(state, data.mesh, data.chart)
        except (SingularDeformationError, ValueError) as exc:
            log.warning("rebase failed at t=%.4f: %s", t0, exc)
            result.termination = "rebase-failure"
            break
        result.compatibility.append(data.compatibility(compat_tol).as_dict())
    return result
