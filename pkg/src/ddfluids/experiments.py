"""Experiment drivers behind the command line: solves, refinement studies,
Gamma-convergence probes, hull certificate suites and the invariant suite."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hulls, oracles
from .config import RunConfig, build_problem, problem_law, write_json
from .datasets import (
    MaterialDataSet,
    check_convergence_bd,
    check_convergence_eq,
    coercivity_certificate,
    dataset_from_dict,
    graph_lattice,
    sample_law,
)
from .laws import ConstitutiveLaw, Ellis, HerschelBulkley, Newtonian, PowerLaw, TabulatedRadial, law_from_dict
from .phase import Exponents, PhasePoint, pq_dist_coords, to_coords, young_defect_coords
from .rng import stream
from .solver import (
    CONVERGED,
    INERTIALESS,
    ProblemSpec,
    SolveReport,
    consistency_check,
    global_step,
    solve,
)
from .spectral import (
    TorusGrid,
    build_symbols,
    field_arrays,
    write_field_binary,
    write_field_csv,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_INCOMPLETE = 0, 1, 2
UNITS = "nondimensional"


def csv_comment(cfg_hash: str) -> str:
    return f"config_hash={cfg_hash}, units={UNITS}"


def write_csv(path, header: list, rows, cfg_hash: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {csv_comment(cfg_hash)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


def fit_rate(x, y) -> float | None:
    """Least-squares slope of ``log y`` against ``log x`` over positive entries."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def oracle_velocity(spec: ProblemSpec, law: ConstitutiveLaw | None) -> np.ndarray | None:
    """Reference velocity for the inertialess problem, when the law admits one."""
    if law is None or spec.regime != INERTIALESS or np.any(spec.eps0) or np.any(spec.sig0):
        return None
    if isinstance(law, Newtonian):
        return oracles.stokes_velocity(spec.force, spec.grid, law.mu0)
    if isinstance(law, PowerLaw):
        return oracles.p_stokes_velocity(spec.force, spec.grid, law.mu0, law.alpha)
    return None


def relative_l2(a, b) -> float:
    den = math.sqrt(float(np.mean(np.sum(b**2, axis=-1))))
    num = math.sqrt(float(np.mean(np.sum((a - b) ** 2, axis=-1))))
    return num / den if den > 0 else num


def report_record(rep: SolveReport, spec: ProblemSpec, law, u_ref=None) -> dict:
    last = rep.iterations[-1]
    rec = {
        "status": rep.status,
        "I_value": rep.final_I,
        "iterations": len(rep.iterations) - 1,
        "strain_residual": last["strain_residual"],
        "divergence_residual": last["divergence_residual"],
        "momentum_residual": last["momentum_residual"],
    }
    if law is not None:
        score = consistency_check(rep, law)
        rec["consistency_max"] = score.max_deviation
        rec["consistency_l2"] = score.l2_deviation
    if u_ref is not None:
        rec["velocity_rel_error"] = relative_l2(rep.vp.u, u_ref)
    return rec


def _status_exit(status: str) -> int:
    return EXIT_OK if status == CONVERGED else EXIT_INCOMPLETE


TRACE_COLUMNS = [
    "iteration",
    "picard_iteration",
    "I_value",
    "assignment_changes",
    "strain_residual",
    "divergence_residual",
    "momentum_residual",
    "energy",
    "picard_inner_iters",
]


def run_solve(cfg: RunConfig, out: Path) -> int:
    h = cfg.config_hash()
    t0 = time.perf_counter()
    spec = build_problem(cfg)
    law = problem_law(cfg)
    rep = solve(spec)
    u_ref = oracle_velocity(spec, law)
    summary = {
        "experiment": "solve",
        "config_hash": h,
        "seed": cfg.seed,
        "dataset_size": len(spec.dataset),
        "result": report_record(rep, spec, law, u_ref),
        "trace": [{k: it[k] for k in TRACE_COLUMNS} for it in rep.iterations],
        "picard": rep.picard,
        "notes": rep.notes,
    }
    write_json(out / "run.json", summary)
    write_json(out / "timings.json", {"total_s": time.perf_counter() - t0, "solve_s": rep.timings["total_s"]})
    if cfg.emit.get("trace", True):
        write_csv(out / "trace.csv", TRACE_COLUMNS, ([it[k] for k in TRACE_COLUMNS] for it in rep.iterations), h)
    if cfg.emit.get("fields", False):
        arrays = field_arrays(rep.field, rep.vp)
        write_field_csv(out / "fields.csv", spec.grid, arrays, csv_comment(h))
        write_field_binary(out / "fields.bin", spec.grid, arrays)
    if cfg.emit.get("plotdata", True):
        rows = [(it["iteration"], k, it[k]) for it in rep.iterations for k in ("I_value", "momentum_residual", "energy")]
        write_csv(out / "plotdata" / "trace_long.csv", ["iteration", "quantity", "value"], rows, h)
    return _status_exit(rep.status)


@dataclass
class StudyResult:
    records: list
    rates: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    reference: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"records": self.records, "rates": self.rates, "errors": self.errors, "reference": self.reference}

    @property
    def complete(self) -> bool:
        return not self.errors and all(r.get("status", CONVERGED) == CONVERGED for r in self.records)


def density_study(cfg: RunConfig, levels) -> StudyResult:
    """Solve with lattice graph data at each spacing ``h`` in ``levels``."""
    law = problem_law(cfg)
    base = dict(cfg.problem["dataset"])
    res = StudyResult([])
    u_ref = None
    for h in levels:
        ds_raw = dict(base, kind="lattice", h=float(h))
        try:
            ds = dataset_from_dict(ds_raw, int(cfg.problem.get("d", 2)), Exponents(float(cfg.problem.get("p", 2.0))))
            spec = build_problem(cfg, ds)
            if u_ref is None:
                u_ref = oracle_velocity(spec, law)
            rep = solve(spec)
            rec = {"h": float(h), "dataset_size": len(ds)}
            rec.update(report_record(rep, spec, law, u_ref))
            res.records.append(rec)
        except Exception as exc:  # partial results are still emitted
            log.exception("level h=%s failed", h)
            res.errors.append({"h": float(h), "error": f"{type(exc).__name__}: {exc}"})
    hs = [r["h"] for r in res.records]
    res.rates["I_value"] = fit_rate(hs, [r["I_value"] for r in res.records])
    if res.records and "velocity_rel_error" in res.records[0]:
        res.rates["velocity_rel_error"] = fit_rate(hs, [r["velocity_rel_error"] for r in res.records])
    if res.records and "consistency_l2" in res.records[0]:
        res.rates["consistency_l2"] = fit_rate(hs, [r["consistency_l2"] for r in res.records])
    return res


def checker_sequence(law: ConstitutiveLaw, exp: Exponents, n: int, R0: float, n_dirs0: int, n_mags0: int, seed: int):
    """Data set of level ``n``: noise ``2^-n``, range ``2^n R0``, density doubling per level."""
    return sample_law(
        law,
        n_dirs0 * 2**n,
        n_mags0 * 2**n,
        R0 * 2.0**n,
        noise=2.0**-n,
        noise_mode="relative",
        seed=seed + n,
        exp=exp,
    )


def checker_study(law: ConstitutiveLaw, exp: Exponents, levels, R: float, seed: int, reference_h: float = 0.02,
                  R0: float = 1.0, n_dirs0: int = 8, n_mags0: int = 8) -> StudyResult:
    """Data-convergence constants of the sequence ``D_n`` on ``dist(z, 0) < R``.

    The limit set is represented by a uniform noiseless strain lattice that
    covers twice the strain radius reachable inside the probed range.
    """
    r_ref = 2.0 * (exp.p * R) ** (1.0 / exp.p)
    ref = graph_lattice(law, reference_h, r_ref, exp, ball=True)
    res = StudyResult([])
    for n in levels:
        dn = checker_sequence(law, exp, n, R0, n_dirs0, n_mags0, seed)
        rep = check_convergence_eq(dn, ref, R, R)
        rec = {"n": n, "a_n": 2.0**-n, "dataset_size": len(dn)}
        rec.update({k: v for k, v in rep.as_dict().items() if k != "witnesses"})
        res.records.append(rec)
    a = [r["a_n"] for r in res.records]
    res.rates["a_hat"] = fit_rate(a, [r["a_hat"] for r in res.records])
    res.rates["b_hat"] = fit_rate(a, [r["b_hat"] for r in res.records])
    return res


def concentration_gap(dn: MaterialDataSet, d_ref: MaterialDataSet, z: PhasePoint, n_nodes: int) -> dict:
    """Functional gap of the mass-concentration field built on a witness ``z``.

    The field equals ``z`` on ``ceil(N / (1 + dist(z, 0)))`` of ``N`` nodes and
    ``0`` elsewhere; its mean magnitude is bounded independently of ``z``.
    """
    exp = d_ref.exp
    mag = float(pq_dist_coords(z.eps.coords, z.sig.coords, exp))
    k = min(n_nodes, math.ceil(n_nodes / (1.0 + mag)))
    eps = np.zeros((n_nodes, dn.m))
    sig = np.zeros((n_nodes, dn.m))
    eps[:k] = z.eps.coords
    sig[:k] = z.sig.coords
    _, dist_n = dn.query(eps, sig)
    _, dist = d_ref.query(eps, sig)
    mean_mag = float(np.mean(pq_dist_coords(eps, sig, exp)))
    return {"J_n": float(dist_n.mean()), "J": float(dist.mean()), "gap": float(abs(dist_n.mean() - dist.mean())),
            "mean_magnitude": mean_mag, "support_fraction": k / n_nodes}


def truncation_counterexample(law: ConstitutiveLaw, exp: Exponents, levels, n_nodes: int = 4096,
                              R_full: float = 64.0, R_bounded: float = 2.0, n_dirs: int = 32,
                              n_mags: int = 128) -> StudyResult:
    """Sets ``D_n = D`` cut at strain radius ``2^n``, with ``D`` a noiseless graph sample plus the origin.

    ``D_n`` agrees with ``D`` on every bounded set once ``2^n`` exceeds it, so
    the bounded-set checker decays, but the growth-normalized checker stays
    away from zero; the concentration field built on its witness keeps a
    functional gap of at least that constant.
    """
    full = sample_law(law, n_dirs, n_mags, R_full, 0.0, exp=exp)
    m = full.m
    d_ref = MaterialDataSet(np.vstack([np.zeros((1, m)), full.eps]), np.vstack([np.zeros((1, m)), full.sig]), exp)
    res = StudyResult([])
    for n in levels:
        keep = np.linalg.norm(d_ref.eps, axis=1) <= 2.0**n
        dn = d_ref.subset(keep)
        bd = check_convergence_bd(dn, d_ref)
        eq = check_convergence_eq(dn, d_ref, R_bounded, R_bounded)
        gap = concentration_gap(dn, d_ref, bd.worst_witnesses["a"], n_nodes)
        res.records.append({"n": n, "dataset_size": len(dn), "a_bd": bd.a_hat, "a_eq": eq.a_hat, "b_eq": eq.b_hat, **gap})
    return res


def gamma_probe(base_law: ConstitutiveLaw, levels: int, make_spec, exp: Exponents, R0: float = 0.5,
                n_dirs0: int = 32, n_mags0: int = 32, seed: int = 0, anchor=None, replicates: int = 1) -> StudyResult:
    """Solve with ``D_n = sample_law(noise 2^-n, range 2^n R0)`` for ``n = 1..levels``.

    ``make_spec(dataset)`` returns the problem for a given data set.  The
    reference solve uses noiseless data at twice the finest density.  Each
    level is solved ``replicates`` times on independent data draws, once from
    the zero start and once warm-started from the reference solution (a
    recovery-sequence probe); ``I_value`` is the replicate mean of the latter,
    ``I_cold`` of the former.  ``anchor`` (a pair of coordinate arrays) is
    added to every data set.
    """
    if levels < 3:
        raise ValueError("a Gamma probe needs at least 3 levels")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if not base_law.is_monotone():
        raise ValueError("the base law must be monotone")

    def level_data(n, noise, draw):
        ds = sample_law(base_law, n_dirs0 * 2 ** (n - 1), n_mags0 * 2 ** (n - 1), R0 * 2.0 ** min(n, levels),
                        noise=noise, seed=seed + 1000 * draw + n, exp=exp)
        if anchor is None:
            return ds
        e = np.vstack([ds.eps, np.atleast_2d(anchor[0])])
        s = np.vstack([ds.sig, np.atleast_2d(anchor[1])])
        return MaterialDataSet(e, s, ds.exp, ds.meta)

    res = StudyResult([])
    try:
        ref = solve(make_spec(level_data(levels + 1, 0.0, 0)))
        res.reference = {"I_value": ref.final_I, "status": ref.status,
                         "consistency_l2": consistency_check(ref, base_law).l2_deviation}
    except Exception as exc:
        log.exception("gamma reference solve failed")
        res.errors.append({"n": "reference", "error": f"{type(exc).__name__}: {exc}"})
        ref = None
    for n in range(1, levels + 1):
        try:
            warm, cold, sizes = [], [], []
            for r in range(replicates):
                dn = level_data(n, 2.0**-n, r)
                spec = make_spec(dn)
                cold.append(solve(spec))
                warm.append(solve(spec, ref.field) if ref is not None else cold[-1])
                sizes.append(len(dn))
        except Exception as exc:  # keep the levels that did finish
            log.exception("gamma level %d failed", n)
            res.errors.append({"n": n, "error": f"{type(exc).__name__}: {exc}"})
            continue
        rec = {"n": n, "a_n": 2.0**-n, "R_n": R0 * 2.0 ** n, "dataset_size": sizes[0], "replicates": replicates}
        rec.update(report_record(warm[0], spec, base_law))
        rec["I_value"] = float(np.mean([w.final_I for w in warm]))
        rec["I_cold"] = float(np.mean([c.final_I for c in cold]))
        rec["I_replicates"] = [w.final_I for w in warm]
        rec["consistency_l2"] = float(np.mean([consistency_check(w, base_law).l2_deviation for w in warm]))
        if any(w.status != CONVERGED for w in warm + cold):
            rec["status"] = next(w.status for w in warm + cold if w.status != CONVERGED)
        if ref is not None:
            er, sr = ref.field.flat()
            dist = []
            for w in warm:
                e, s_ = w.field.flat()
                dist.append(float(np.mean(pq_dist_coords(e - er, s_ - sr, exp))))
            rec["distance_to_reference"] = float(np.mean(dist))
            rec["velocity_distance_to_reference"] = float(np.mean([relative_l2(w.vp.u, ref.vp.u) for w in warm]))
        res.records.append(rec)
    a = [r["a_n"] for r in res.records]
    for key in ("I_value", "I_cold", "distance_to_reference", "consistency_l2"):
        if res.records and key in res.records[0]:
            res.rates[key] = fit_rate(a, [r[key] for r in res.records])
    return res


def base_law_m(law: ConstitutiveLaw) -> int:
    return 2 if law.dim == 2 else 5


class SpecFactory:
    """Callable turning a data set into a ``ProblemSpec`` for a fixed configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.exp = Exponents(float(cfg.problem.get("p", 2.0)))

    def __call__(self, ds: MaterialDataSet) -> ProblemSpec:
        return build_problem(self.cfg, ds)


DEFAULT_HULL_LAWS = [
    ({"kind": "newtonian", "mu0": 0.5}, 2.0),
    ({"kind": "power_law", "mu0": 0.5, "alpha": 2.0}, 3.0),
    ({"kind": "herschel_bulkley", "a": 1.0, "mu0": 0.5, "alpha": 1.0}, 2.0),
    ({"kind": "ellis", "mu0": 0.5, "s_half": 1.0, "beta": 1.5}, 2.0),
    ({"kind": "tabulated", "s": [0.0, 0.5, 1.0, 2.0], "tau": [0.0, 0.4, 0.6, 1.5]}, 2.0),
]


def hull_suite(laws, n_on: int = 10_000, n_off: int = 1_000, R: float = 3.0, seed: int = 0, d: int = 2,
               tol: float = 1e-10, n_verify: int = 10_000) -> dict:
    """On-set points must be inside; off-set points must get positive, verifiable certificates."""
    out = {"laws": [], "certificates": []}
    for i, (law_raw, p) in enumerate(laws):
        law = law_from_dict(law_raw, d)
        exp = Exponents(p)
        rng = stream(seed, "hulls", i)
        e_on, s_on = hulls.sample_on_set(law, n_on, R, rng)
        inside = 0
        for e, s in zip(e_on, s_on):
            inside += hulls.hull_membership(hulls.point_from(e, s, d), law, exp, tol)[0]
        e_off, s_off = hulls.sample_off_set(law, n_off, R, rng)
        positive = failed = wrongly_inside = 0
        certs = []
        for e, s in zip(e_off, s_off):
            try:
                ins, cert = hulls.hull_membership(hulls.point_from(e, s, d), law, exp, tol)
            except hulls.WitnessSearchFailed:
                failed += 1
                continue
            if ins:
                wrongly_inside += 1
            elif cert.value > 0:
                positive += 1
                certs.append(cert)
        # separating functions must be nonpositive on the data set and of (p,q) growth
        e_chk, s_chk = hulls.sample_on_set(law, n_verify, R, rng)
        growth = 1.0 + np.linalg.norm(e_chk, axis=1) ** exp.p + np.linalg.norm(s_chk, axis=1) ** exp.q
        max_on_set = -np.inf
        growth_ok = True
        for cert in certs[:: max(1, len(certs) // 50)]:
            f = hulls.certificate_function(cert, law, exp)
            vals = f(e_chk, s_chk)
            scale = tol * growth
            max_on_set = max(max_on_set, float(np.max(vals - scale)))
            growth_ok &= bool(np.all(np.abs(vals) <= hulls.growth_constant(cert, law, exp) * growth))
        rec = {
            "law": law.params(),
            "p": p,
            "n_on": n_on,
            "inside_on_set": inside,
            "n_off": n_off,
            "positive_certificates": positive,
            "wrongly_inside": wrongly_inside,
            "witness_search_failed": failed,
            "max_separator_on_set_minus_tol": max_on_set,
            "growth_bound_holds": growth_ok,
        }
        rec["passed"] = bool(
            inside == n_on and positive == n_off and failed == 0 and max_on_set <= 0 and growth_ok
        )
        out["laws"].append(rec)
        out["certificates"] += [dict(c.to_dict(), law=law.kind) for c in certs]
    out["spanning"] = {f"d{dd}": hulls.spanning_check(dd, 8 if dd == 2 else 16) for dd in (2, 3)}
    out["passed"] = all(r["passed"] for r in out["laws"]) and all(out["spanning"].values())
    return out


def run_hulls(cfg: RunConfig, out: Path) -> int:
    h = cfg.config_hash()
    hc = cfg.hulls
    laws = [(l, float(l.pop("p", 2.0))) for l in (dict(x) for x in hc["laws"])] if "laws" in hc else DEFAULT_HULL_LAWS
    res = hull_suite(laws, int(hc.get("n_on", 10_000)), int(hc.get("n_off", 1_000)), float(hc.get("R", 3.0)),
                     cfg.seed, int(hc.get("d", 2)))
    certs = res.pop("certificates")
    res.update({"experiment": "hulls", "config_hash": h, "seed": cfg.seed})
    write_json(out / "run.json", res)
    if cfg.emit.get("certificates", True):
        write_json(out / "certs.json", certs)
    if cfg.emit.get("plotdata", True):
        rows = [(r["law"]["kind"], k, r[k]) for r in res["laws"] for k in ("inside_on_set", "positive_certificates", "witness_search_failed")]
        write_csv(out / "plotdata" / "hulls_long.csv", ["law", "quantity", "value"], rows, h)
    return EXIT_OK if res["passed"] else EXIT_ERROR


def run_study(cfg: RunConfig, out: Path) -> int:
    h = cfg.config_hash()
    st = cfg.study
    mode = st.get("mode", "density")
    if mode == "density":
        res = density_study(cfg, st["levels"])
        key = "h"
    else:
        law = problem_law(cfg)
        exp = Exponents(float(cfg.problem.get("p", 2.0)))
        res = checker_study(law, exp, st["levels"], float(st.get("R", 2.0)), cfg.seed,
                            reference_h=float(st.get("reference_h", 0.02)), R0=float(st.get("R0", 1.0)), n_dirs0=int(st.get("n_dirs0", 8)), n_mags0=int(st.get("n_mags0", 8)))
        key = "n"
    summary = {"experiment": "study", "mode": mode, "config_hash": h, "seed": cfg.seed, **res.to_dict()}
    write_json(out / "run.json", summary)
    _emit_records(cfg, out, res.records, key, h)
    if res.errors:
        return EXIT_ERROR
    return EXIT_OK if res.complete else EXIT_INCOMPLETE


def _emit_records(cfg, out, records, key, h):
    if not records:
        return
    cols = sorted({k for r in records for k, v in r.items() if isinstance(v, (int, float, str))})
    if cfg.emit.get("trace", True):
        write_csv(out / "levels.csv", cols, ([r.get(c, "") for c in cols] for r in records), h)
    if cfg.emit.get("plotdata", True):
        rows = [(r[key], c, r[c]) for r in records for c in cols if c != key and isinstance(r.get(c), (int, float))]
        write_csv(out / "plotdata" / "levels_long.csv", [key, "quantity", "value"], rows, h)


def run_gamma(cfg: RunConfig, out: Path) -> int:
    h = cfg.config_hash()
    gc = cfg.gamma
    law = law_from_dict(gc["base_law"], int(cfg.problem.get("d", 2))) if "base_law" in gc else problem_law(cfg)
    factory = SpecFactory(cfg)
    anchor = None
    if gc.get("anchor_means"):
        means = cfg.problem.get("means", {})
        anchor = (np.asarray(means.get("eps0", [0.0] * base_law_m(law)), float),
                  np.asarray(means.get("sig0", [0.0] * base_law_m(law)), float))
    res = gamma_probe(law, int(gc.get("levels", 4)), factory, factory.exp, float(gc.get("R0", 0.5)),
                      int(gc.get("n_dirs0", 32)), int(gc.get("n_mags0", 32)), cfg.seed, anchor,
                      int(gc.get("replicates", 1)))
    summary = {"experiment": "gamma", "config_hash": h, "seed": cfg.seed, **res.to_dict()}
    write_json(out / "run.json", summary)
    _emit_records(cfg, out, res.records, "n", h)
    if res.errors:
        return EXIT_ERROR
    return EXIT_OK if res.complete else EXIT_INCOMPLETE


def run_gen_data(cfg: RunConfig, out: Path) -> int:
    d = int(cfg.problem.get("d", 2))
    exp = Exponents(float(cfg.problem.get("p", 2.0)))
    ds = dataset_from_dict(cfg.problem["dataset"], d, exp, cfg.seed)
    ds.meta["config_hash"] = cfg.config_hash()
    ds.save(out / "dataset.csv")
    write_json(out / "run.json", {"experiment": "gen-data", "config_hash": cfg.config_hash(), "seed": cfg.seed,
                                  "dataset_size": len(ds), "meta": ds.meta})
    return EXIT_OK


def verify_invariants(seed: int = 0) -> dict:
    """Fast cross-module invariant suite; every check reports pass/fail and a detail value."""
    from .datasets import MaterialDataSet as MDS
    from .phase import metric_d
    from .spectral import (
        force_hat,
        particular_stress,
        project_strain,
        project_stress,
    )

    checks = {}
    rng = stream(seed, "verify")

    def record(name, ok, detail):
        checks[name] = {"passed": bool(ok), "detail": detail}

    # triangle inequality and Young's inequality
    worst = -np.inf
    for p in (2.0, 3.0, 1.5, 4.0):
        exp = Exponents(p)
        a, b, c = (rng.standard_normal((5000, 4)) * rng.uniform(0.01, 10, (5000, 1)) for _ in range(3))
        dab = pq_dist_coords(a[:, :2] - b[:, :2], a[:, 2:] - b[:, 2:], exp) ** (1 / exp.pmax)
        dbc = pq_dist_coords(b[:, :2] - c[:, :2], b[:, 2:] - c[:, 2:], exp) ** (1 / exp.pmax)
        dac = pq_dist_coords(a[:, :2] - c[:, :2], a[:, 2:] - c[:, 2:], exp) ** (1 / exp.pmax)
        worst = max(worst, float(np.max(dac - dab - dbc - 1e-12 * (1 + dab + dbc))))
        worst = max(worst, float(-np.min(young_defect_coords(a[:, :2], a[:, 2:], exp))) - 1e-12)
    record("triangle_and_young", worst <= 0, worst)

    # nearest-point index against a linear scan
    bad = 0
    for p in (2.0, 3.0, 1.5):
        pts = rng.standard_normal((2000, 4))
        ds = MDS(pts[:, :2], pts[:, 2:], Exponents(p))
        q = rng.standard_normal((300, 4)) * 1.5
        i1, d1 = ds.query(q[:, :2], q[:, 2:])
        i2, d2 = oracles.brute_nearest(q[:, :2], q[:, 2:], pts[:, :2], pts[:, 2:], p)
        bad += int(np.sum(np.abs(d1 - d2) > 1e-12 * (1 + d2)))
    record("nearest_vs_linear_scan", bad == 0, bad)

    # projections: idempotence, residuals, null-Lagrangian identity
    worst = 0.0
    for d, n in ((2, 8), (3, 8)):
        g = TorusGrid(d, n)
        sb = build_symbols(g)
        e = rng.standard_normal(g.shape + (g.m,))
        s = rng.standard_normal(g.shape + (g.m,))
        e0, s0 = rng.standard_normal(g.m), rng.standard_normal(g.m)
        zero = np.zeros((g.N, g.m), complex)
        ep = project_strain(e, sb, e0)
        sp = project_stress(s, sb, zero, s0)
        worst = max(worst, float(np.abs(project_strain(ep, sb, e0) - ep).max()),
                    float(np.abs(project_stress(sp, sb, zero, s0) - sp).max()),
                    abs(float(np.mean(np.sum(ep * sp, axis=-1))) - float(e0 @ s0)) / (1 + np.linalg.norm(e0) * np.linalg.norm(s0)))
    record("projection_idempotence_and_null_lagrangian", worst <= 1e-10, worst)

    # per-mode projection against the dense constrained least-squares oracle
    g = TorusGrid(2, 4)
    sb = build_symbols(g)
    worst = 0.0
    for _ in range(3):
        f = rng.standard_normal(g.shape + (2,))
        fh = g.hat(f)
        fh[sb.zero] = 0
        fh[sb.degenerate] = 0
        f = g.unhat(fh)
        et, st = rng.standard_normal(g.shape + (2,)), rng.standard_normal(g.shape + (2,))
        e0, s0 = rng.standard_normal(2), rng.standard_normal(2)
        ds = MDS(np.zeros((1, 2)), np.zeros((1, 2)), Exponents(2.0))
        spec = ProblemSpec(g, Exponents(2.0), ds, f, e0, s0)
        fld, vp = global_step(et, st, spec)
        ref = oracles.kkt_projection(et, st, f, g, e0, s0)
        worst = max(worst, *(float(np.abs(a - b).max()) for a, b in
                              ((fld.eps, ref["eps"]), (fld.sig, ref["sig"]), (vp.u, ref["u"]), (vp.pi, ref["pi"]))))
    record("global_step_vs_kkt", worst <= 1e-10, worst)

    # monotone descent of the functional
    worst = -np.inf
    for k in range(3):
        g = TorusGrid(2, 8)
        ds = sample_law(Newtonian(), 16, 16, 2.0, noise=0.1, seed=seed + k)
        x = g.coordinates()
        f = np.zeros(g.shape + (2,))
        f[..., 0] = (1 + k) * np.sin(2 * np.pi * x[..., 1])
        rep = solve(ProblemSpec(g, Exponents(2.0), ds, f))
        I = rep.I_values
        worst = max(worst, float(np.max(np.diff(I) - 1e-12 * (1 + I[:-1]))) if len(I) > 1 else -1.0)
    record("monotone_descent", worst <= 0, worst)

    # hull certificates on a small sample
    res = hull_suite(DEFAULT_HULL_LAWS[:3], n_on=500, n_off=100, seed=seed, n_verify=500)
    record("hull_certificates", res["passed"], [r["passed"] for r in res["laws"]])
    return checks


def run_verify(cfg: RunConfig, out: Path) -> int:
    checks = verify_invariants(cfg.seed)
    ok = all(c["passed"] for c in checks.values())
    write_json(out / "run.json", {"experiment": "verify", "seed": cfg.seed, "config_hash": cfg.config_hash(),
                                  "passed": ok, "checks": checks})
    return EXIT_OK if ok else EXIT_ERROR


RUNNERS = {
    "solve": run_solve,
    "study": run_study,
    "gamma": run_gamma,
    "hulls": run_hulls,
    "verify": run_verify,
    "gen-data": run_gen_data,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.experiment](cfg, out)
