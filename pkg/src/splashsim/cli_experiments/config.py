"""Run configuration: defaults, presets, file loading, overrides and validation.

A configuration is a nested dictionary with the sections

- ``geometry``: ``chart`` (ConformalChart keywords) and ``domain`` (template name plus sizes)
- ``initial``: ``velocity`` (``stream`` or ``rest``), ``stream`` profile options, ``F0`` and ``F0_params``
- ``solver``: WindowConfig fields
- ``norms``: NormConfig fields
- ``run``: ``horizon``, ``snapshot_every``, ``compat_tol``
- ``splash``: ``threshold_factor``, ``curvature_factor``
- ``stability``: ``epsilons``, ``direction``, ``t_bar``, ``jobs``
- ``output``: ``dir``
- ``seed``

Files may be YAML or JSON; values given on the command line as
``--override a.b.c=VALUE`` are parsed with the YAML scalar rules.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from ..initial_data import F0_TEMPLATES, F0Template, InitialDataError, validate_F0
from ..norms_diagnostics import NormConfig
from ..picard_solver import WindowConfig
from .scenarios import DOMAINS, PROFILES


class ConfigError(ValueError):
    """Configuration rejected; ``check`` names the failed validation."""

    def __init__(self, check: str, message: str):
        super().__init__(f"[{check}] {message}")
        self.check = check


DEFAULTS: dict = {
    "geometry": {
        "chart": {"kind": "sqrt", "branch_cut_angle": float(np.pi), "center": [0.0, 0.0]},
        "domain": {"name": "horseshoe"},
    },
    "initial": {
        "velocity": "stream",
        "stream": {"amplitude": 3.0},
        "F0": "identity",
        "F0_params": {},
    },
    "solver": {"T": 0.004, "dt": 0.0005, "max_iters": 30, "tol": 1e-8, "rtol": 1e-9},
    "norms": {"s": 2.25, "gamma": 1.1},
    "run": {"horizon": 0.04, "snapshot_every": 8, "compat_tol": 0.1},
    "splash": {"threshold_factor": 1e-3, "curvature_factor": 10.0},
    "stability": {"epsilons": [0.02, 0.01, 0.005], "direction": [1.0, 0.0], "t_bar": 0.01, "jobs": 1},
    "output": {"dir": "runs/default"},
    "seed": 0,
}

PRESETS: dict[str, dict] = {
    "splash": {},
    "rest": {"initial": {"velocity": "rest"}, "run": {"horizon": 0.01}},
    "patch": {
        "geometry": {"domain": {"name": "mapped_rectangle", "n1": 24, "n2": 24}},
        "initial": {
            "stream": {
                "amplitude": 1.0,
                "support": [0.1, 0.9],
                "tube_inner": 2.0,
                "tube_outer": 1.0,
                "curvature_scale": 0.3,
            }
        },
        "solver": {"T": 0.004, "dt": 0.001},
        "run": {"horizon": 0.008},
    },
    "stability": {
        "geometry": {"domain": {"name": "mapped_rectangle", "n1": 24, "n2": 24}},
        "initial": {
            "stream": {
                "amplitude": 1.0,
                "support": [0.1, 0.9],
                "tube_inner": 2.0,
                "tube_outer": 1.0,
                "curvature_scale": 0.3,
            }
        },
        "solver": {"T": 0.004, "dt": 0.001},
        "stability": {"t_bar": 0.008},
    },
}


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(source: str | Path | dict | None = None, overrides: list[str] | None = None) -> dict:
    """Defaults, then a preset name / file / dict, then ``KEY=VALUE`` overrides; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if isinstance(source, dict):
        cfg = deep_merge(cfg, source)
    elif source is not None:
        cfg = deep_merge(cfg, _read_source(str(source)))
    for item in overrides or []:
        apply_override(cfg, item)
    validate(cfg)
    return cfg


def _read_source(source: str) -> dict:
    if source in PRESETS:
        return PRESETS[source]
    path = Path(source)
    if not path.exists():
        raise ConfigError("config_file", f"no preset or file named {source!r}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config_syntax", str(exc)) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config_syntax", "top level must be a mapping")
    return data


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError("override", f"expected KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError("override", f"{key!r} descends into a non-mapping")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError("override", f"cannot parse value of {key!r}: {exc}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads 1e-14 (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node[parts[-1]] = value


_SECTIONS = {"geometry", "initial", "solver", "norms", "run", "splash", "stability", "output", "seed"}


def validate(cfg: dict) -> None:
    unknown = set(cfg) - _SECTIONS
    if unknown:
        raise ConfigError("schema", f"unknown sections {sorted(unknown)}")
    geom = cfg["geometry"]
    chart = geom.get("chart", {})
    if chart.get("kind", "sqrt") not in ("sqrt", "identity"):
        raise ConfigError("chart", f"unknown chart kind {chart.get('kind')!r}")
    dom = geom.get("domain", {})
    if dom.get("name", "horseshoe") not in DOMAINS:
        raise ConfigError("domain", f"unknown domain template {dom.get('name')!r}; known: {DOMAINS}")

    init = cfg["initial"]
    if init.get("velocity") not in ("stream", "rest"):
        raise ConfigError("velocity", f"unknown initial velocity {init.get('velocity')!r}")
    if init.get("F0") not in F0_TEMPLATES:
        raise ConfigError("F0_template", f"unknown F0 template {init.get('F0')!r}; known: {F0_TEMPLATES}")
    profile = init.get("stream", {}).get("profile", "polynomial")
    if profile not in PROFILES:
        raise ConfigError("profile", f"unknown stream profile {profile!r}")
    F0 = F0Template(init["F0"], dict(init.get("F0_params", {})))
    probe = np.random.default_rng(0).uniform(-2.0, 2.0, size=(16, 2)) + np.array([0.0, 3.0])
    try:
        validate_F0(F0, probe)
    except InitialDataError as exc:
        check = "det_F0" if "det" in str(exc) else "div_F0"
        raise ConfigError(check, str(exc)) from exc

    _construct(WindowConfig, cfg["solver"], "solver")
    _construct(NormConfig, cfg["norms"], "norms")

    run = cfg["run"]
    if not float(run.get("horizon", 0)) > 0:
        raise ConfigError("horizon", "run.horizon must be positive")
    sp = cfg["splash"]
    if not float(sp.get("threshold_factor", 0)) > 0 or not float(sp.get("curvature_factor", 0)) > 0:
        raise ConfigError("splash", "splash factors must be positive")

    st = cfg["stability"]
    eps = [float(e) for e in st.get("epsilons", [])]
    if not eps or any(e <= 0 for e in eps):
        raise ConfigError("epsilons", "stability.epsilons must be a non-empty list of positive values")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("epsilons", "stability.epsilons must be strictly decreasing")
    b = np.asarray(st.get("direction", [1.0, 0.0]), dtype=float)
    if b.shape != (2,) or not np.linalg.norm(b) > 0:
        raise ConfigError("direction", "stability.direction must be a nonzero 2-vector")
    if not float(st.get("t_bar", 0)) > 0:
        raise ConfigError("t_bar", "stability.t_bar must be positive")
    if not isinstance(cfg.get("seed", 0), int):
        raise ConfigError("seed", "seed must be an integer")


def _construct(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    extra = set(values) - known
    if extra:
        raise ConfigError(section, f"unknown {section} keys {sorted(extra)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from exc


def window_config(cfg: dict) -> WindowConfig:
    return WindowConfig(**cfg["solver"])


def norm_config(cfg: dict) -> NormConfig:
    return NormConfig(**cfg["norms"])


def dump_config(cfg: dict, path: Path) -> None:
    path.write_text(yaml.safe_dump(cfg, sort_keys=True))
