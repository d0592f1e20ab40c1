"""Subcommand implementations. Each takes a validated config and an output directory and returns an exit code."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..conformal_geometry import PlanarCurve, Shift, discrete_curvature, hausdorff_distance, min_gap, pullback_curve, self_intersect
from ..initial_data import InitialDataError
from ..lagrangian_state import Mesh, SingularDeformationError
from ..picard_solver import MarchResult, SolverError, march
from . import checks
from .config import dump_config, norm_config, window_config
from .scenarios import build_initial_data

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


# ------------------------------------------------------------- output helpers


def write_csv(path: Path, rows: list[dict], header: list[str] | None = None) -> None:
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(checks._jsonable(obj), indent=2, sort_keys=True) + "\n")


def prepare_out(out: Path, cfg: dict) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    return out


def smooth_curvature(curve: PlanarCurve, mesh: Mesh) -> float:
    """Max |discrete curvature| away from the mesh corners, where the boundary has true kinks."""
    kappa = np.abs(discrete_curvature(curve))
    return float(kappa[~mesh.is_corner].max())


# ------------------------------------------------------------- simulate


@dataclass
class LevelSeries:
    """Per-level diagnostics of the pulled-back boundary."""

    times: list[float] = field(default_factory=list)
    min_gap: list[float] = field(default_factory=list)
    curvature: list[float] = field(default_factory=list)
    crossed: list[bool] = field(default_factory=list)

    def add(self, t: float, curve: PlanarCurve, mesh: Mesh) -> float:
        g = min_gap(curve)
        self.times.append(float(t))
        self.min_gap.append(g)
        self.curvature.append(smooth_curvature(curve, mesh))
        self.crossed.append(g == 0.0 or self_intersect(curve) is not None)
        return g

    def rows(self) -> list[dict]:
        return [
            {"level": k, "t": t, "min_gap": g, "max_curvature": c, "self_intersecting": int(x)}
            for k, (t, g, c, x) in enumerate(zip(self.times, self.min_gap, self.curvature, self.crossed))
        ]


def run_march(cfg: dict, stop=None, horizon: float | None = None, shift=None) -> tuple[MarchResult, Mesh]:
    data = build_initial_data(cfg, shift)
    result = march(
        float(cfg["run"]["horizon"] if horizon is None else horizon),
        window_config(cfg),
        data,
        norm_config(cfg),
        stop=stop,
        compat_tol=float(cfg["run"].get("compat_tol", 0.1)),
    )
    return result, data.mesh


def write_march(out: Path, result: MarchResult, series: LevelSeries, every: int) -> None:
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    index = []
    last = len(result.times) - 1
    for k, t in enumerate(result.times):
        if k % every and k != last:
            continue
        result.tilde_curves[k].to_csv(snap / f"tilde_{k:05d}.csv")
        result.curves[k].to_csv(snap / f"original_{k:05d}.csv")
        index.append({"level": k, "t": t})
    write_csv(snap / "index.csv", index, ["level", "t"])
    write_csv(out / "min_gap.csv", series.rows(), ["level", "t", "min_gap", "max_curvature", "self_intersecting"])

    res_rows, it_rows = [], []
    t0 = 0.0
    for w, (state, rep, res) in enumerate(zip(result.windows, result.reports, result.residuals)):
        T = float(state.times[-1])
        res_rows.append(
            {"window": w, "t_start": t0, "t_end": t0 + T, "iterations": rep.iterations, "contraction": rep.contraction(), **res}
        )
        for row in rep.rows():
            it_rows.append({"window": w, **row})
        t0 += T
    res_keys = ["window", "t_start", "t_end", "iterations", "contraction", "momentum", "incompressibility",
                "incompressibility_raw", "traction", "flow_map", "deformation", "detG"]
    write_csv(out / "residuals.csv", res_rows, res_keys)
    write_csv(out / "iterations.csv", it_rows, ["window", "iteration", "v", "q", "X", "G", "total", "ratio"])
    comp = [{"rebase": k, **c} for k, c in enumerate(result.compatibility)]
    write_csv(out / "compatibility.csv", comp, ["rebase", "div_u", "div_F", "det_F", "tangential_traction", "tolerance", "passed"])


def cmd_simulate(cfg: dict, out: Path) -> int:
    out = prepare_out(out, cfg)
    try:
        result, mesh = run_march(cfg)
    except (InitialDataError, SingularDeformationError) as exc:
        log.error("initial data rejected: %s", exc)
        return EXIT_VALIDATION
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    series = LevelSeries()
    for t, c in zip(result.times, result.curves):
        series.add(t, c, mesh)
    write_march(out, result, series, int(cfg["run"].get("snapshot_every", 8)))
    ok = result.termination == "horizon"
    summary = {
        "termination": result.termination,
        "final_time": result.times[-1] if result.times else 0.0,
        "levels": len(result.times),
        "windows": len(result.windows),
        "max_residuals": {k: max(r[k] for r in result.residuals) for k in result.residuals[0]} if result.residuals else {},
        "min_gap_initial": series.min_gap[0] if series.min_gap else None,
        "min_gap_final": series.min_gap[-1] if series.min_gap else None,
    }
    write_json(out / "summary.json", summary)
    log.info("simulate: %s at t=%.5f", result.termination, summary["final_time"])
    return EXIT_OK if ok else EXIT_SOLVER


# ------------------------------------------------------------- splash search


@dataclass
class SplashReport:
    termination: str
    threshold: float
    diameter: float
    curvature_bound: float
    t_lo: float | None = None
    t_hi: float | None = None
    min_gap_lo: float | None = None
    min_gap_hi: float | None = None
    curvature_lo: float | None = None
    curvature_hi: float | None = None
    dt: float = 0.0
    times: list[float] = field(default_factory=list)
    min_gap: list[float] = field(default_factory=list)
    curvature: list[float] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.t_lo is not None

    @property
    def width(self) -> float | None:
        return None if not self.found else self.t_hi - self.t_lo

    @property
    def sign_condition(self) -> bool:
        return self.found and self.min_gap_lo - self.threshold > 0 >= self.min_gap_hi - self.threshold

    @property
    def curvature_ok(self) -> bool:
        return self.found and max(self.curvature_lo, self.curvature_hi) <= self.curvature_bound

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(found=self.found, width=self.width, sign_condition=self.sign_condition, curvature_ok=self.curvature_ok)
        return d


def bisect_crossing(values: list[float], threshold: float) -> tuple[int, int]:
    """Adjacent indices lo, hi with values[lo] > threshold >= values[hi].

    Needs values[0] > threshold >= values[-1]; halving keeps that sign
    pattern at the two ends.
    """
    lo, hi = 0, len(values) - 1
    if not (values[lo] > threshold >= values[hi]):
        raise ValueError("ends do not bracket the threshold")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if values[mid] > threshold:
            lo = mid
        else:
            hi = mid
    return lo, hi


def splash_search(cfg: dict) -> tuple[SplashReport, MarchResult | None, Mesh]:
    data = build_initial_data(cfg)
    mesh = data.mesh
    c0 = pullback_curve(mesh.boundary_curve(), data.chart)
    diam = c0.diameter
    thr = float(cfg["splash"]["threshold_factor"]) * diam
    bound = float(cfg["splash"]["curvature_factor"]) * smooth_curvature(c0, mesh)
    series = LevelSeries()
    series.add(0.0, c0, mesh)
    report = SplashReport("no-splash-found", thr, diam, bound, dt=window_config(cfg).dt)
    if series.min_gap[0] <= thr:
        report.termination = "initial-gap-below-threshold"
        return report, None, mesh

    def stop(t, curve):
        if t <= series.times[-1]:
            return None
        g = series.add(t, curve, mesh)
        if g <= thr or series.crossed[-1]:
            return "threshold-crossed"
        return None

    result = march(float(cfg["run"]["horizon"]), window_config(cfg), data, norm_config(cfg), stop=stop,
                   compat_tol=float(cfg["run"].get("compat_tol", 0.1)))
    report.times, report.min_gap, report.curvature = series.times, series.min_gap, series.curvature
    if result.termination == "threshold-crossed":
        # a detected crossing counts as zero gap even if the exclusion window hid it from min_gap
        gaps = [0.0 if x else g for g, x in zip(series.min_gap, series.crossed)]
        lo, hi = bisect_crossing(gaps, thr)
        report.t_lo, report.t_hi = series.times[lo], series.times[hi]
        report.min_gap_lo, report.min_gap_hi = gaps[lo], gaps[hi]
        report.curvature_lo, report.curvature_hi = series.curvature[lo], series.curvature[hi]
        report.termination = "splash-bracketed" if report.curvature_ok else "curvature-bound-exceeded"
    elif result.termination != "horizon":
        report.termination = result.termination
    return report, result, mesh


def cmd_splash_search(cfg: dict, out: Path) -> int:
    out = prepare_out(out, cfg)
    try:
        report, result, mesh = splash_search(cfg)
    except (InitialDataError, SingularDeformationError) as exc:
        log.error("initial data rejected: %s", exc)
        return EXIT_VALIDATION
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    write_json(out / "splash_report.json", report.as_dict())
    rows = [{"t": t, "min_gap": g, "max_curvature": c} for t, g, c in zip(report.times, report.min_gap, report.curvature)]
    write_csv(out / "min_gap.csv", rows, ["t", "min_gap", "max_curvature"])
    if result is not None and report.found:
        for tag, t in (("lo", report.t_lo), ("hi", report.t_hi)):
            k = result.times.index(t)
            result.curves[k].to_csv(out / f"original_{tag}.csv")
            result.tilde_curves[k].to_csv(out / f"tilde_{tag}.csv")
    log.info("splash-search: %s", report.termination)
    if report.termination == "splash-bracketed":
        return EXIT_OK
    if report.termination in ("nonconvergence", "rebase-failure"):
        return EXIT_SOLVER
    return EXIT_CHECK


# ------------------------------------------------------------- stability


def stability_member(cfg: dict, epsilon: float, out: Path | None = None) -> dict:
    """One member of the shifted family: tilde boundaries at t = 0 and t = t_bar."""
    st = cfg["stability"]
    shift = Shift(float(epsilon), tuple(st["direction"])) if epsilon > 0 else None
    vec = shift.vector if shift is not None else None
    t_bar = float(st["t_bar"])
    try:
        result, mesh = run_march(cfg, horizon=t_bar, shift=vec)
    except (SolverError, SingularDeformationError, InitialDataError) as exc:
        return {"epsilon": epsilon, "status": f"failed: {exc}"}
    reached = result.termination == "horizon" and abs(result.times[-1] - t_bar) < 1e-12
    member = {
        "epsilon": epsilon,
        "status": "ok" if reached else f"failed: {result.termination}",
        "initial": result.tilde_curves[0].nodes if result.times else None,
        "final": result.tilde_curves[-1].nodes if reached else None,
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if member["initial"] is not None:
            result.tilde_curves[0].to_csv(out / "tilde_initial.csv")
        if reached:
            result.tilde_curves[-1].to_csv(out / "tilde_final.csv")
        write_json(out / "member.json", {"epsilon": epsilon, "status": member["status"], "windows": len(result.windows)})
    return member


def stability_table(base: dict, members: list[dict]) -> tuple[list[dict], float | None]:
    """Hausdorff distances to the base run, and the log-log slope over the successes."""
    rows = []
    b0 = PlanarCurve(base["initial"], diagnostic=True)
    bT = PlanarCurve(base["final"], diagnostic=True)
    for m in members:
        row = {"epsilon": m["epsilon"], "status": m["status"], "distance_initial": None, "distance_final": None}
        if m["status"] == "ok":
            row["distance_initial"] = hausdorff_distance(b0, PlanarCurve(m["initial"], diagnostic=True))
            row["distance_final"] = hausdorff_distance(bT, PlanarCurve(m["final"], diagnostic=True))
        rows.append(row)
    good = [r for r in rows if r["status"] == "ok" and r["epsilon"] > 0 and r["distance_final"] > 0]
    slope = checks.loglog_slope([r["epsilon"] for r in good], [r["distance_final"] for r in good]) if len(good) >= 2 else None
    return rows, slope


def _member_job(args):
    cfg, eps, out = args
    return stability_member(cfg, eps, out)


def cmd_stability(cfg: dict, out: Path) -> int:
    out = prepare_out(out, cfg)
    eps_list = [float(e) for e in cfg["stability"]["epsilons"]]
    jobs = [(cfg, 0.0, out / "base")] + [(cfg, e, out / f"eps_{e:.6g}") for e in eps_list]
    n_workers = int(cfg["stability"].get("jobs", 1))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_member_job, jobs))
    else:
        results = [_member_job(j) for j in jobs]
    base, members = results[0], results[1:]
    if base["status"] != "ok":
        log.error("base run failed: %s", base["status"])
        write_json(out / "stability.json", {"base": base["status"], "slope": None})
        return EXIT_SOLVER
    rows, slope = stability_table(base, members)
    write_csv(out / "stability.csv", rows, ["epsilon", "status", "distance_initial", "distance_final"])
    write_json(out / "stability.json", {"t_bar": cfg["stability"]["t_bar"], "direction": cfg["stability"]["direction"], "rows": rows, "slope": slope})
    log.info("stability: slope %s", slope)
    return EXIT_OK if slope is not None else EXIT_SOLVER


# ------------------------------------------------------------- verify


def cmd_verify(cfg: dict, out: Path, only: list[str] | None = None) -> int:
    out = prepare_out(out, cfg)
    suite = checks.default_suite(int(cfg.get("seed", 0)), splash_config=cfg)
    results = checks.run_suite(suite, only)
    for r in results:
        print(r.line())
    report = {"passed": all(r.passed for r in results), "checks": [r.as_dict() for r in results]}
    write_json(out / "verify.json", report)
    return EXIT_OK if report["passed"] else EXIT_CHECK
