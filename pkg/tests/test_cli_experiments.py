import json

import numpy as np
import pytest

from splashsim import lagrangian_state, picard_solver
from splashsim.cli_experiments import commands
from splashsim.cli_experiments.cli import main
from splashsim.cli_experiments.commands import (
    SplashReport,
    bisect_crossing,
    splash_search,
    stability_member,
    stability_table,
)
from splashsim.cli_experiments.config import PRESETS, ConfigError, load_config
from splashsim.conformal_geometry import PlanarCurve, Shift, hausdorff_distance, shift_curve

# ------------------------------------------------------------- configuration


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    cfg = load_config(name)
    assert cfg["solver"]["dt"] > 0


def test_overrides_parse_yaml_scalars():
    cfg = load_config("splash", ["solver.dt=0.00025", "stability.epsilons=[0.1, 0.05]", "initial.F0=shear"])
    assert cfg["solver"]["dt"] == 0.00025
    assert cfg["stability"]["epsilons"] == [0.1, 0.05]
    assert cfg["initial"]["F0"] == "shear"
    assert load_config("splash", ["solver.tol=1e-12"])["solver"]["tol"] == 1e-12


@pytest.mark.parametrize(
    "override, check",
    [
        ("bogus.key=1", "schema"),
        ("initial.F0=shearing", "F0_template"),
        ("initial.F0=shear;initial.F0_params={c: 0.5}", None),
        ("initial.F0=constant;initial.F0_params={matrix: [2.0, 0.0, 0.0, 2.0]}", "det_F0"),
        ("stability.epsilons=[0.01, 0.02]", "epsilons"),
        ("solver.dt=0.1", "solver"),
        ("norms.s=3.0", "norms"),
        ("geometry.domain.name=disk", "domain"),
        ("no_equals_sign", "override"),
    ],
)
def test_invalid_configs_name_their_check(override, check):
    items = override.split(";")
    if check is None:
        load_config("splash", items)
        return
    with pytest.raises(ConfigError) as err:
        load_config("splash", items)
    assert err.value.check == check


def test_config_files(tmp_path):
    y = tmp_path / "run.yaml"
    y.write_text("solver:\n  dt: 0.001\nrun:\n  horizon: 0.02\n")
    assert load_config(str(y))["run"]["horizon"] == 0.02
    j = tmp_path / "run.json"
    j.write_text(json.dumps({"seed": 7}))
    assert load_config(str(j))["seed"] == 7
    bad = tmp_path / "bad.yaml"
    bad.write_text("solver: [unclosed\n")
    with pytest.raises(ConfigError) as err:
        load_config(str(bad))
    assert err.value.check == "config_syntax"
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


# ------------------------------------------------------------- command line


def _read_all(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_simulate_rest_is_deterministic(tmp_path):
    assert main(["simulate", "--config", "rest", "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", "rest", "--out", str(tmp_path / "b")]) == 0
    a, b = _read_all(tmp_path / "a"), _read_all(tmp_path / "b")
    assert {"summary.json", "min_gap.csv", "residuals.csv", "snapshots/index.csv"} <= set(a)
    assert a == b
    summary = json.loads(a["summary.json"])
    assert summary["termination"] == "horizon"


def test_invalid_override_exits_2(tmp_path, capsys):
    assert main(["simulate", "--override", "initial.F0=shearing", "--out", str(tmp_path)]) == 2
    assert "F0_template" in capsys.readouterr().err


def test_solver_failure_exits_3(tmp_path):
    args = ["simulate", "--config", "patch", "--out", str(tmp_path)]
    for item in ("solver.max_iters=1", "solver.tol=1e-14", "solver.rtol=0.0", "solver.min_T=0.002"):
        args += ["--override", item]
    assert main(args) == 3
    assert json.loads((tmp_path / "summary.json").read_text())["termination"] == "nonconvergence"


def test_rest_splash_search_finds_nothing(tmp_path):
    assert main(["splash-search", "--config", "rest", "--out", str(tmp_path)]) == 4
    report = json.loads((tmp_path / "splash_report.json").read_text())
    assert report["termination"] == "no-splash-found" and not report["found"]


def test_verify_single_check(tmp_path, capsys):
    assert main(["verify", "--only", "chart", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("PASS  chart")
    assert json.loads((tmp_path / "verify.json").read_text())["passed"]


def _flipped_elastic_traction(v, q, G, X, mesh, chart):
    # assembly bug: elastic stress enters the boundary condition with the wrong sign
    good = lagrangian_state.residual_traction(v, q, G, X, mesh, chart)
    b = mesh.boundary
    elastic = np.einsum("nik,njk->nij", G[b], G[b]) - np.eye(2)
    n = lagrangian_state.traction_direction(X, mesh, chart)
    return good - 2.0 * np.einsum("nij,nj->ni", elastic, n)


def test_traction_check_catches_sign_error(tmp_path, monkeypatch):
    assert main(["verify", "--only", "traction", "--out", str(tmp_path / "ok")]) == 0
    monkeypatch.setattr(picard_solver, "residual_traction", _flipped_elastic_traction)
    assert main(["verify", "--only", "traction", "--out", str(tmp_path / "bad")]) == 4
    report = json.loads((tmp_path / "bad" / "verify.json").read_text())
    assert report["checks"][0]["metrics"]["max_traction"] > 1e-3


# ------------------------------------------------------------- splash bracketing


@pytest.mark.parametrize("seed", range(20))
def test_bisection_brackets_first_sign_change(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 200))
    values = np.sort(rng.uniform(0, 1, n))[::-1]
    thr = float(rng.uniform(values[-1], values[0] - 1e-12))
    lo, hi = bisect_crossing(list(values), thr)
    assert hi == lo + 1
    assert values[lo] > thr >= values[hi]


def test_bisection_needs_bracketing_ends():
    with pytest.raises(ValueError):
        bisect_crossing([1.0, 0.8, 0.6], 0.5)


def test_report_sign_and_curvature_flags():
    r = SplashReport("splash-bracketed", 0.1, 2.0, 5.0, t_lo=0.1, t_hi=0.2, min_gap_lo=0.2, min_gap_hi=0.1,
                     curvature_lo=1.0, curvature_hi=6.0)
    assert r.sign_condition and not r.curvature_ok
    assert r.width == pytest.approx(0.1)
    assert not SplashReport("no-splash-found", 0.1, 2.0, 5.0).sign_condition


def test_splash_run_brackets_crossing(splash_run):
    cfg, report, result, mesh = splash_run
    assert report.termination == "splash-bracketed"
    assert report.width <= report.dt * (1 + 1e-9)
    assert report.sign_condition and report.curvature_ok
    # the gap closes steadily over the first steps
    assert np.all(np.diff(report.min_gap[:8]) < 0)


def test_rest_search_has_no_bracket():
    report, _, _ = splash_search(load_config("rest"))
    assert report.termination == "no-splash-found" and report.t_lo is None


@pytest.mark.slow
def test_halving_dt_halves_bracket(splash_run):
    cfg, report, _, _ = splash_run
    finer, _, _ = splash_search(load_config("splash", [f"solver.dt={cfg['solver']['dt'] / 2}"]))
    assert finer.termination == "splash-bracketed"
    assert finer.width == pytest.approx(report.width / 2, rel=1e-6)
    assert report.t_lo - report.dt <= finer.t_lo <= report.t_hi


# ------------------------------------------------------------- stability table


@pytest.fixture(scope="module")
def stability_members():
    cfg = load_config("stability")
    base = stability_member(cfg, 0.0)
    members = [stability_member(cfg, e) for e in cfg["stability"]["epsilons"]]
    return cfg, base, members


def test_shift_members_start_at_distance_epsilon(stability_members):
    cfg, base, members = stability_members
    rows, slope = stability_table(base, members)
    for row in rows:
        assert row["status"] == "ok"
        assert row["distance_initial"] == pytest.approx(row["epsilon"], rel=1e-10)
    assert 0.8 <= slope <= 1.2


def test_zero_shift_member_matches_base(stability_members):
    cfg, base, _ = stability_members
    rows, _ = stability_table(base, [dict(base, epsilon=0.0)])
    assert rows[0]["distance_initial"] == 0.0 and rows[0]["distance_final"] == 0.0


def test_initial_distance_agrees_with_rigid_translate(stability_members):
    cfg, base, members = stability_members
    eps = members[0]["epsilon"]
    moved = shift_curve(PlanarCurve(base["initial"], diagnostic=True), Shift(eps, tuple(cfg["stability"]["direction"])))
    assert np.allclose(moved.nodes, members[0]["initial"], atol=1e-12)
    assert hausdorff_distance(moved, PlanarCurve(members[0]["initial"], diagnostic=True)) < 1e-12


def test_table_is_order_invariant(stability_members):
    _, base, members = stability_members
    rows, slope = stability_table(base, members)
    rows_r, slope_r = stability_table(base, members[::-1])
    assert slope == pytest.approx(slope_r, rel=1e-12)
    assert sorted(r["distance_final"] for r in rows) == sorted(r["distance_final"] for r in rows_r)


def test_failed_member_is_reported_not_fatal(tmp_path, monkeypatch):
    real = commands.stability_member

    def flaky(cfg, epsilon, out=None):
        if epsilon == 0.01:
            return {"epsilon": epsilon, "status": "failed: nonconvergence"}
        return real(cfg, epsilon, out)

    monkeypatch.setattr(commands, "stability_member", flaky)
    assert main(["stability", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "stability.json").read_text())
    status = {r["epsilon"]: r["status"] for r in data["rows"]}
    assert status[0.01].startswith("failed") and status[0.02] == "ok"
    assert data["slope"] is not None
