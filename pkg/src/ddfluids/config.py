"""JSON run configuration: parsing, validation with key paths, and problem assembly.

A configuration is one JSON document::

    {
      "experiment": "solve" | "study" | "gamma" | "hulls" | "verify" | "gen-data",
      "seed": 0,
      "output_dir": "out",
      "emit": {"fields": false, "trace": true, "certificates": true, "plotdata": true},
      "problem": {
        "d": 2, "n": 16, "p": 2.0, "regime": "inertialess",
        "means": {"eps0": [0, 0], "sig0": [0, 0]},
        "force": {"kind": "modes", "terms": [{"k": [0, 1], "amp": [1, 0], "phase": "sin"}]},
        "dataset": {"kind": "lattice", "law": {"kind": "newtonian"}, "h": 0.01, "R": 0.5},
        "tol": {"functional_rel": 1e-8, "max_outer": 200}
      },
      "study": {...}, "gamma": {...}, "hulls": {...}
    }

See README for the experiment-specific sections.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .datasets import MaterialDataSet, dataset_from_dict
from .laws import LAW_KINDS, law_from_dict
from .phase import Exponents, sym_dim
from .solver import INERTIAL, INERTIALESS, ProblemSpec, Tolerances, exponent_floor
from .spectral import NonzeroMeanForce, TorusGrid

EXPERIMENTS = ("solve", "study", "gamma", "hulls", "verify", "gen-data")
EMIT_DEFAULTS = {"fields": False, "trace": True, "certificates": True, "plotdata": True}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class RunConfig:
    experiment: str
    problem: dict
    output_dir: str = "out"
    seed: int = 0
    emit: dict = field(default_factory=lambda: dict(EMIT_DEFAULTS))
    study: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    hulls: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def config_hash(self) -> str:
        """Hash of the configuration content; the output directory does not enter it."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _num(raw, key, path, errors, default=None, positive=False, integer=False):
    if key not in raw:
        if default is None:
            errors.append(f"{path}.{key}: required")
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{path}.{key}: expected a number, got {v!r}")
        return default
    if integer and int(v) != v:
        errors.append(f"{path}.{key}: expected an integer, got {v!r}")
        return default
    if positive and not v > 0:
        errors.append(f"{path}.{key}: must be > 0, got {v!r}")
    return int(v) if integer else float(v)


def _check_law(raw, path, errors) -> None:
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected an object")
        return
    kind = raw.get("kind")
    if kind not in LAW_KINDS:
        errors.append(f"{path}.kind: unknown law {kind!r}; expected one of {sorted(LAW_KINDS)}")
        return
    try:
        law_from_dict(raw, 2)
    except (TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")


def _check_force(raw, d, path, errors) -> None:
    if raw is None:
        return
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected an object")
        return
    kind = raw.get("kind", "zero")
    if kind == "modes":
        terms = raw.get("terms", [])
        if not isinstance(terms, list) or not terms:
            errors.append(f"{path}.terms: expected a nonempty list")
            return
        for i, t in enumerate(terms):
            tp = f"{path}.terms[{i}]"
            k = t.get("k")
            amp = t.get("amp")
            if not isinstance(k, list) or len(k) != d or any(int(v) != v for v in k):
                errors.append(f"{tp}.k: expected {d} integers")
            elif all(v == 0 for v in k):
                errors.append(f"{tp}.k: the zero wave vector gives a nonzero-mean force")
            if not isinstance(amp, list) or len(amp) != d:
                errors.append(f"{tp}.amp: expected {d} numbers")
            if t.get("phase", "sin") not in ("sin", "cos"):
                errors.append(f"{tp}.phase: expected 'sin' or 'cos'")
    elif kind in ("taylor_green", "shear"):
        _num(raw, "amp", path, errors, default=1.0)
    elif kind == "constant":
        errors.append(f"{path}.kind: a constant force has nonzero mean; no periodic balance exists")
    elif kind != "zero":
        errors.append(f"{path}.kind: unknown force kind {kind!r}")


def _check_problem(raw, path, errors, lattice_h: bool = True) -> None:
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected an object")
        return
    d = _num(raw, "d", path, errors, default=2, integer=True)
    n = _num(raw, "n", path, errors, default=16, integer=True)
    p = _num(raw, "p", path, errors, default=2.0)
    if d not in (2, 3):
        errors.append(f"{path}.d: spatial dimension must be 2 or 3, got {d}")
        d = 2
    if n is not None and (n < 4 or n % 2):
        errors.append(f"{path}.n: grid size must be even and >= 4 (grid evenness), got {n}")
    if p is not None and not p > 1:
        errors.append(f"{path}.p: exponent must be > 1, got {p}")
    regime = raw.get("regime", INERTIALESS)
    if regime not in (INERTIALESS, INERTIAL):
        errors.append(f"{path}.regime: expected {INERTIALESS!r} or {INERTIAL!r}, got {regime!r}")
    elif regime == INERTIAL and p is not None and p < exponent_floor(d) - 1e-12:
        errors.append(
            f"{path}.p: inertial regime needs p >= 3d/(d+2) = {exponent_floor(d):.6g}, got {p}"
        )
    m = sym_dim(d)
    means = raw.get("means", {})
    for key in ("eps0", "sig0"):
        v = means.get(key)
        if v is not None and (not isinstance(v, list) or len(v) != m):
            errors.append(f"{path}.means.{key}: expected {m} coordinates")
    _check_force(raw.get("force"), d, f"{path}.force", errors)
    ds = raw.get("dataset")
    if ds is None:
        errors.append(f"{path}.dataset: required")
    elif not isinstance(ds, dict):
        errors.append(f"{path}.dataset: expected an object")
    else:
        kind = ds.get("kind", "sample")
        if kind == "file":
            if "path" not in ds:
                errors.append(f"{path}.dataset.path: required for file data sets")
        elif kind in ("sample", "lattice"):
            _check_law(ds.get("law"), f"{path}.dataset.law", errors)
            if kind == "lattice" and lattice_h:
                _num(ds, "h", f"{path}.dataset", errors, positive=True)
            else:
                for k in ("n_dirs", "n_mags"):
                    v = ds.get(k, 1)
                    if not isinstance(v, int) or v < 1:
                        errors.append(f"{path}.dataset.{k}: must be an integer >= 1")
                if ds.get("noise", 0) < 0:
                    errors.append(f"{path}.dataset.noise: must be >= 0")
                if ds.get("noise_mode", "relative") not in ("relative", "absolute"):
                    errors.append(f"{path}.dataset.noise_mode: expected 'relative' or 'absolute'")
            if "R" in ds:
                _num(ds, "R", f"{path}.dataset", errors, positive=True)
        else:
            errors.append(f"{path}.dataset.kind: unknown data set kind {kind!r}")
    tol = raw.get("tol", {})
    try:
        Tolerances(**tol)
    except (TypeError, ValueError) as exc:
        errors.append(f"{path}.tol: {exc}")


def validate(raw: dict) -> RunConfig:
    """Check every constraint and raise ``ConfigError`` listing all violations."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    exp_name = raw.get("experiment")
    if exp_name not in EXPERIMENTS:
        errors.append(f"experiment: expected one of {list(EXPERIMENTS)}, got {exp_name!r}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        errors.append(f"seed: expected an integer in [0, 2^64), got {seed!r}")
    emit = dict(EMIT_DEFAULTS)
    for k, v in raw.get("emit", {}).items():
        if k not in EMIT_DEFAULTS:
            errors.append(f"emit.{k}: unknown flag")
        elif not isinstance(v, bool):
            errors.append(f"emit.{k}: expected true/false")
        else:
            emit[k] = v
    needs_problem = exp_name in ("solve", "study", "gamma", "gen-data")
    problem = raw.get("problem", {})
    if needs_problem:
        # a density study supplies the lattice spacing per level
        density = exp_name == "study" and raw.get("study", {}).get("mode", "density") == "density"
        _check_problem(problem, "problem", errors, lattice_h=not density)
    if exp_name == "gamma":
        g = raw.get("gamma", {})
        lv = g.get("levels", 4)
        if not isinstance(lv, int) or lv < 3:
            errors.append(f"gamma.levels: at least 3 levels are required, got {lv!r}")
    if exp_name == "study":
        s = raw.get("study", {})
        mode = s.get("mode", "density")
        if mode not in ("density", "checkers"):
            errors.append(f"study.mode: expected 'density' or 'checkers', got {mode!r}")
        lv = s.get("levels", [])
        if not isinstance(lv, list) or len(lv) < 2:
            errors.append("study.levels: expected a list of at least two refinement levels")
        elif mode == "density" and any(not isinstance(v, (int, float)) or v <= 0 for v in lv):
            errors.append("study.levels: lattice spacings must be positive numbers")
        elif mode == "density" and any(b >= a for a, b in zip(lv, lv[1:])):
            errors.append("study.levels: lattice spacings must be strictly decreasing")
        elif mode == "checkers" and any(b <= a for a, b in zip(lv, lv[1:])):
            errors.append("study.levels: levels must be strictly increasing")
    if exp_name == "hulls":
        for i, law in enumerate(raw.get("hulls", {}).get("laws", [])):
            _check_law(law, f"hulls.laws[{i}]", errors)
    if errors:
        raise ConfigError(errors)
    return RunConfig(
        experiment=exp_name,
        problem=copy.deepcopy(problem),
        output_dir=str(raw.get("output_dir", "out")),
        seed=int(seed),
        emit=emit,
        study=copy.deepcopy(raw.get("study", {})),
        gamma=copy.deepcopy(raw.get("gamma", {})),
        hulls=copy.deepcopy(raw.get("hulls", {})),
    )


def force_from_dict(raw: dict | None, grid: TorusGrid) -> np.ndarray:
    x = grid.coordinates()
    d = grid.d
    f = np.zeros(grid.shape + (d,))
    raw = raw or {"kind": "zero"}
    kind = raw.get("kind", "zero")
    tp = 2.0 * np.pi
    if kind == "modes":
        for t in raw["terms"]:
            k = np.asarray(t["k"], dtype=float)
            amp = np.asarray(t["amp"], dtype=float)
            arg = tp * (x @ k)
            wave = np.sin(arg) if t.get("phase", "sin") == "sin" else np.cos(arg)
            f += wave[..., None] * amp
    elif kind == "taylor_green":
        a = float(raw.get("amp", 1.0))
        if d == 2:
            f[..., 0] = a * np.sin(tp * x[..., 0]) * np.cos(tp * x[..., 1])
            f[..., 1] = -a * np.cos(tp * x[..., 0]) * np.sin(tp * x[..., 1])
        else:
            c = np.cos(tp * x[..., 2])
            f[..., 0] = a * np.sin(tp * x[..., 0]) * np.cos(tp * x[..., 1]) * c
            f[..., 1] = -a * np.cos(tp * x[..., 0]) * np.sin(tp * x[..., 1]) * c
    elif kind == "shear":
        f[..., 0] = float(raw.get("amp", 1.0)) * np.sin(tp * x[..., 1])
    elif kind != "zero":
        raise ValueError(f"unknown force kind {kind!r}")
    return f


def build_problem(cfg: RunConfig, dataset: MaterialDataSet | None = None) -> ProblemSpec:
    raw = cfg.problem
    d, n, p = int(raw.get("d", 2)), int(raw.get("n", 16)), float(raw.get("p", 2.0))
    grid = TorusGrid(d, n)
    exp = Exponents(p)
    ds = dataset if dataset is not None else dataset_from_dict(raw["dataset"], d, exp, cfg.seed)
    force = force_from_dict(raw.get("force"), grid)
    means = raw.get("means", {})
    try:
        return ProblemSpec(
            grid,
            exp,
            ds,
            force,
            means.get("eps0"),
            means.get("sig0"),
            regime=raw.get("regime", INERTIALESS),
            tol=Tolerances(**raw.get("tol", {})),
        )
    except NonzeroMeanForce as exc:
        raise ConfigError([f"problem.force: {exc}"]) from exc


def problem_law(cfg: RunConfig):
    ds = cfg.problem.get("dataset", {})
    if "law" in ds:
        return law_from_dict(ds["law"], int(cfg.problem.get("d", 2)))
    return None


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
