"""Staggered data-driven solver: nearest-data assignment alternated with
projection onto the Stokes / Navier-Stokes constraint set on the torus."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .datasets import CoercivityCertificate, MaterialDataSet
from .laws import ConstitutiveLaw
from .phase import Exponents, sym_dim
from .spectral import (
    Field,
    SymbolBasis,
    TorusGrid,
    VelocityPressure,
    build_symbols,
    check_force,
    convective_force,
    momentum_residual_hat,
    particular_stress,
    pressure_hat,
    project_strain_hat,
    project_stress_hat,
    velocity_hat_from_strain,
)

INERTIALESS = "inertialess"
INERTIAL = "inertial"

CONVERGED = "Converged"
STALLED = "Stalled"
MAXITER = "MaxIter"


class InnerSolveDiverged(RuntimeError):
    pass


class InadmissibleExponent(ValueError):
    pass


@dataclass
class Tolerances:
    functional_rel: float = 1e-8
    assignment_stall: int = 2
    max_outer: int = 200
    picard_damping: float = 0.7
    picard_max: int = 50
    picard_tol: float = 1e-10
    inner_budget: int = 500

    def __post_init__(self):
        if not self.functional_rel > 0:
            raise ValueError("functional_rel must be > 0")
        if self.assignment_stall < 1 or self.max_outer < 1 or self.picard_max < 1 or self.inner_budget < 1:
            raise ValueError("iteration limits must be >= 1")
        if not 0 < self.picard_damping <= 1:
            raise ValueError("picard_damping must lie in (0, 1]")


def exponent_floor(d: int) -> float:
    """Smallest ``p`` for which the convective term is compact: ``3d/(d+2)``."""
    return 3.0 * d / (d + 2.0)


@dataclass
class ProblemSpec:
    """Everything that defines one data-driven solve.

    ``force`` is a physical array of shape ``(n,)*d + (d,)`` or ``None``.
    """

    grid: TorusGrid
    exp: Exponents
    dataset: MaterialDataSet
    force: np.ndarray | None = None
    eps0: np.ndarray | None = None
    sig0: np.ndarray | None = None
    regime: str = INERTIALESS
    tol: Tolerances = field(default_factory=Tolerances)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        g = self.grid
        if self.regime not in (INERTIALESS, INERTIAL):
            raise ValueError(f"regime must be {INERTIALESS!r} or {INERTIAL!r}, got {self.regime!r}")
        if self.regime == INERTIAL:
            floor = exponent_floor(g.d)
            if self.exp.p < floor - 1e-12:
                raise InadmissibleExponent(
                    f"inertial regime needs p >= 3d/(d+2) = {floor:.6g} in d={g.d}, got p={self.exp.p:.6g}"
                )
            if abs(self.exp.p - floor) <= 1e-12:
                msg = f"p = 3d/(d+2) = {floor:.6g} is the borderline case; compactness needs p strictly larger"
                self.notes.append(msg)
                warnings.warn(msg, stacklevel=2)
        if self.dataset.dim != g.d:
            raise ValueError(f"data set dimension {self.dataset.dim} differs from grid dimension {g.d}")
        if abs(self.dataset.exp.p - self.exp.p) > 1e-12:
            raise ValueError("data set exponents differ from the problem exponents")
        m = g.m
        self.eps0 = np.zeros(m) if self.eps0 is None else np.asarray(self.eps0, dtype=float).reshape(m)
        self.sig0 = np.zeros(m) if self.sig0 is None else np.asarray(self.sig0, dtype=float).reshape(m)
        if self.force is None:
            self.force = np.zeros(g.shape + (g.d,))
        self.force = np.asarray(self.force, dtype=float)
        if self.force.shape != g.shape + (g.d,):
            raise ValueError(f"force must have shape {g.shape + (g.d,)}")
        self.force_hat = g.hat(self.force)
        check_force(self.force_hat, g)

    @property
    def symbols(self) -> SymbolBasis:
        return build_symbols(self.grid)


@dataclass
class Assignment:
    index: np.ndarray
    eps: np.ndarray
    sig: np.ndarray
    dist: np.ndarray
    changes: int

    @property
    def value(self) -> float:
        return float(self.dist.mean())


def local_step(fld: Field, ds: MaterialDataSet, previous: np.ndarray | None = None) -> Assignment:
    """Nearest data point for every node; ties go to the lowest index."""
    e, s = fld.flat()
    idx, dist = ds.query(e, s)
    shape = fld.grid.shape + (fld.grid.m,)
    changes = int(idx.size if previous is None else np.count_nonzero(idx != previous))
    return Assignment(idx, ds.eps[idx].reshape(shape), ds.sig[idx].reshape(shape), dist, changes)


def functional_value(fld: Field, ds: MaterialDataSet) -> float:
    """Node-mean of the distance to the data set."""
    return local_step(fld, ds).value


def _power_objective(r, expo):
    nr = np.linalg.norm(r, axis=-1, keepdims=True)
    val = float(np.sum(nr**expo)) / expo
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(nr > 0, nr ** (expo - 2.0) * r, 0.0)
    return val, g


@dataclass
class InnerInfo:
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True


def _minimize_power(x0, target, expo, proj, tol_scale, rel, budget, info: InnerInfo):
    """Minimize ``mean (1/r)|x - target|^r`` over ``x0 + range(proj)``."""
    shape = x0.shape
    N = x0.size // shape[-1]
    cache = {}

    def fun(w):
        x = x0 + proj(w.reshape(shape))
        val, g = _power_objective(x - target, expo)
        pg = proj(g)
        cache["w"], cache["pg"] = w, pg
        return val / N, pg.reshape(-1) / N

    def gnorm(pg):
        return math.sqrt(float(np.sum(pg**2)) / N)

    def callback(intermediate_result):
        w = intermediate_result.x
        if cache.get("w") is None or not np.array_equal(cache["w"], w):
            fun(w)
        if gnorm(cache["pg"]) <= rel * tol_scale:
            raise StopIteration

    w = np.zeros(x0.size)
    fun(w)
    if gnorm(cache["pg"]) <= rel * tol_scale:
        info.grad_norm = max(info.grad_norm, gnorm(cache["pg"]))
        return x0
    used = 0
    while used < budget:
        res = minimize(
            fun,
            w,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxiter": budget - used, "maxfun": 4 * budget, "ftol": 0.0, "gtol": 0.0, "maxcor": 20},
        )
        used += max(int(res.nit), 1)
        improved = not np.array_equal(res.x, w)
        w = res.x
        fun(w)
        g = gnorm(cache["pg"])
        if g <= rel * tol_scale:
            break
        if not improved:
            # line search cannot make progress: the iterate is at working precision
            info.converged = False
            break
    else:
        g = gnorm(cache["pg"])
        if g > rel * tol_scale:
            raise InnerSolveDiverged(
                f"inner minimization exceeded {budget} iterations (gradient {g:.3e} > {rel * tol_scale:.3e})"
            )
    info.iterations += used
    info.grad_norm = max(info.grad_norm, g)
    return x0 + proj(w.reshape(shape))


def _hom_strain(sb: SymbolBasis):
    g = sb.grid

    def proj(x):
        return g.unhat(project_strain_hat(g.hat(x), sb, None))

    return proj


def _hom_stress(sb: SymbolBasis):
    g = sb.grid
    zero = np.zeros((g.N, g.m), dtype=complex)

    def proj(x):
        return g.unhat(project_stress_hat(g.hat(x), sb, zero, None))

    return proj


def assemble(eps_hat, sig_hat, fh, sb: SymbolBasis, eps0, sig0) -> tuple[Field, VelocityPressure]:
    g = sb.grid
    uh = velocity_hat_from_strain(eps_hat, sb)
    ph = pressure_hat(sig_hat, fh, sb)
    fld = Field(g, g.unhat(eps_hat), g.unhat(sig_hat), eps0, sig0)
    vp = VelocityPressure(g.unhat(uh), g.unhat(ph[:, None])[..., 0])
    return fld, vp


def global_step(
    eps_t: np.ndarray,
    sig_t: np.ndarray,
    spec: ProblemSpec,
    force_hat: np.ndarray | None = None,
    info: InnerInfo | None = None,
) -> tuple[Field, VelocityPressure]:
    """Constraint-set element closest to the targets in the summed ``dist_pq``.

    ``force_hat`` overrides the problem force (the inertial loop passes the
    effective force there).  For p = q = 2 this is the exact per-mode
    projection; otherwise the strain and stress subproblems are minimized
    separately by L-BFGS over the constraint parameterization, starting from
    that projection.
    """
    sb = spec.symbols
    g = spec.grid
    fh = spec.force_hat if force_hat is None else force_hat
    info = info if info is not None else InnerInfo()
    part = particular_stress(fh, sb)
    eh = project_strain_hat(g.hat(eps_t), sb, spec.eps0)
    sh = project_stress_hat(g.hat(sig_t), sb, part, spec.sig0)
    if not spec.exp.is_quadratic():
        tol = spec.tol
        e0, s0 = g.unhat(eh), g.unhat(sh)
        ve, _ = _power_objective(e0 - eps_t, spec.exp.p)
        vs, _ = _power_objective(s0 - sig_t, spec.exp.q)
        scale = 1.0 + (ve + vs) / g.N
        e = _minimize_power(e0, eps_t, spec.exp.p, _hom_strain(sb), scale, tol.functional_rel, tol.inner_budget, info)
        s = _minimize_power(s0, sig_t, spec.exp.q, _hom_stress(sb), scale, tol.functional_rel, tol.inner_budget, info)
        # re-impose the constraints exactly after the iterative solve
        eh = project_strain_hat(g.hat(e), sb, spec.eps0)
        sh = project_stress_hat(g.hat(s), sb, part, spec.sig0)
    return assemble(eh, sh, fh, sb, spec.eps0, spec.sig0)


def residuals(fld: Field, vp: VelocityPressure, fh: np.ndarray, sb: SymbolBasis) -> dict:
    """Spectral residuals of strain compatibility, incompressibility and momentum balance."""
    g = sb.grid
    eh = g.hat(fld.eps)
    uh = g.hat(vp.u)
    sh = g.hat(fld.sig)
    ph = g.hat(vp.pi[..., None])[:, 0]
    from .spectral import sym_grad_hat

    target = eh.copy()
    target[sb.zero] = 0.0
    return {
        "strain_residual": g.mean_l2(eh - project_strain_hat(eh, sb, fld.eps0)),
        "strain_velocity_residual": g.mean_l2(sym_grad_hat(uh, sb) - target),
        "divergence_residual": g.mean_l2(2j * np.pi * np.sum(uh * sb.xi, axis=1)),
        "momentum_residual": g.mean_l2(momentum_residual_hat(sh, ph, fh, sb)),
    }


def _energy(fld: Field, exp: Exponents) -> float:
    e, s = fld.flat()
    return float(np.mean(np.linalg.norm(e, axis=1) ** exp.p) + np.mean(np.linalg.norm(s, axis=1) ** exp.q))


@dataclass
class SolveReport:
    iterations: list
    field: Field
    vp: VelocityPressure
    status: str
    assignment: np.ndarray
    picard: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def I_values(self) -> np.ndarray:
        return np.array([it["I_value"] for it in self.iterations])

    @property
    def final_I(self) -> float:
        return float(self.iterations[-1]["I_value"])

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def summary(self) -> dict:
        return {
            "status": self.status,
            "final_I": self.final_I,
            "n_iterations": len(self.iterations),
            "n_picard": len(self.picard),
            "final_residuals": {k: v for k, v in self.iterations[-1].items() if k.endswith("residual")},
            "notes": list(self.notes),
        }


def _inertialess(spec: ProblemSpec, fh, start: Assignment | None, trace: list, picard_iter: int):
    ds = spec.dataset
    sb = spec.symbols
    tol = spec.tol
    g = spec.grid
    if start is None:
        z = np.zeros(g.shape + (g.m,))
        fld, vp = global_step(z, z, spec, fh)
        asg = local_step(fld, ds)
    else:
        fld, vp = global_step(start.eps, start.sig, spec, fh)
        asg = local_step(fld, ds, start.index)
    I_old = asg.value
    trace.append(_record(0, I_old, asg.changes, fld, vp, fh, sb, spec.exp, picard_iter, InnerInfo()))
    stall = 0
    status = MAXITER
    for it in range(1, tol.max_outer + 1):
        info = InnerInfo()
        cand, cand_vp = global_step(asg.eps, asg.sig, spec, fh, info)
        new = local_step(cand, ds, asg.index)
        if new.value > I_old:
            # an inexact inner solve must not undo progress; keep the incumbent
            new = Assignment(asg.index, asg.eps, asg.sig, asg.dist, 0)
        else:
            fld, vp = cand, cand_vp
        I_new = new.value
        trace.append(_record(it, I_new, new.changes, fld, vp, fh, sb, spec.exp, picard_iter, info))
        decrease = I_old - I_new
        asg = new
        stall = stall + 1 if new.changes == 0 else 0
        if I_new == 0.0 or decrease <= tol.functional_rel * I_old:
            status = CONVERGED
            break
        if stall >= tol.assignment_stall:
            status = STALLED
            break
        I_old = I_new
    return fld, vp, asg, status


def _record(it, I, changes, fld, vp, fh, sb, exp, picard_iter, info: InnerInfo) -> dict:
    rec = {"iteration": it, "I_value": I, "assignment_changes": changes}
    rec.update(residuals(fld, vp, fh, sb))
    rec["energy"] = _energy(fld, exp)
    rec["picard_iteration"] = picard_iter
    rec["picard_inner_iters"] = info.iterations
    rec["inner_grad_norm"] = info.grad_norm
    return rec


def solve(spec: ProblemSpec, initial: Field | None = None) -> SolveReport:
    """Run the staggered scheme (and the outer Picard loop in the inertial regime).

    ``initial`` warm-starts the scheme from the data points nearest to a given
    field instead of from the projection of zero targets.
    """
    t0 = time.perf_counter()
    trace: list = []
    g = spec.grid
    first = None if initial is None else local_step(initial, spec.dataset)
    if spec.regime == INERTIALESS:
        fld, vp, asg, status = _inertialess(spec, spec.force_hat, first, trace, 0)
        rep = SolveReport(trace, fld, vp, status, asg.index, notes=list(spec.notes))
        rep.timings["total_s"] = time.perf_counter() - t0
        return rep

    tol = spec.tol
    theta = tol.picard_damping
    u_old = np.zeros(g.shape + (g.d,))
    start = first
    picard = []
    prev_delta = math.inf
    status = MAXITER
    for k in range(1, tol.picard_max + 1):
        fh_eff = spec.force_hat - convective_force(u_old, g)
        fld, vp, asg, inner_status = _inertialess(spec, fh_eff, start, trace, k)
        start = asg
        delta = g.mean_l2(vp.u - u_old)
        unorm = g.mean_l2(vp.u)
        picard.append({"picard_iteration": k, "delta_u": delta, "theta": theta, "inner_status": inner_status})
        if delta < tol.picard_tol * (1.0 + unorm):
            status = inner_status
            break
        if delta > prev_delta:
            theta = max(theta / 2.0, 0.1)
        prev_delta = delta
        u_old = (1.0 - theta) * u_old + theta * vp.u
    # pressure and residuals against the full nonlinear balance at the reported velocity
    sb = spec.symbols
    fh_final = spec.force_hat - convective_force(vp.u, g)
    ph = pressure_hat(g.hat(fld.sig), fh_final, sb)
    vp = VelocityPressure(vp.u, g.unhat(ph[:, None])[..., 0])
    trace[-1].update({"full_" + k: v for k, v in residuals(fld, vp, fh_final, sb).items()})
    rep = SolveReport(trace, fld, vp, status, asg.index, picard=picard, notes=list(spec.notes))
    rep.timings["total_s"] = time.perf_counter() - t0
    return rep


def full_momentum_residual(rep: SolveReport, spec: ProblemSpec) -> float:
    """Momentum residual including ``div(u (x) u)`` at the reported velocity."""
    g = spec.grid
    sb = spec.symbols
    fh = spec.force_hat - convective_force(rep.vp.u, g)
    return g.mean_l2(momentum_residual_hat(g.hat(rep.field.sig), g.hat(rep.vp.pi[..., None])[:, 0], fh, sb))


@dataclass
class ConsistencyScore:
    max_deviation: float
    l2_deviation: float
    final_I: float


def consistency_check(rep: SolveReport, law: ConstitutiveLaw) -> ConsistencyScore:
    """Node-wise deviation of the solved stress from the constitutive law at the solved strain."""
    e, s = rep.field.flat()
    dev = np.linalg.norm(s - law.stress(e), axis=1)
    return ConsistencyScore(float(dev.max()), float(np.sqrt(np.mean(dev**2))), rep.final_I)


@dataclass(frozen=True)
class CoercivityBound:
    """``||eps||_p^p + ||sig||_q^q <= C1 * I + C2`` (node-mean norms) on the constraint set."""

    C1: float
    C2: float

    def __call__(self, I: float) -> float:
        return self.C1 * I + self.C2


def coercivity_bound(cert: CoercivityCertificate, exp: Exponents, grid: TorusGrid, force_hat, eps0, sig0) -> CoercivityBound:
    """Constants of the a priori bound implied by a coercivity certificate.

    The derivation splits each node against its nearest data point, absorbs
    the cross terms with a weighted Young inequality, and controls the mean
    pairing through ``mean(eps.sig) = eps0.sig0 + mean(u.f)``, the last term
    bounded by ``G ||eps||_p`` with ``G`` the ``H^-1``-type norm of the force.
    """
    p, q = exp.p, exp.q
    c1, c2 = cert.c1, cert.c2
    K = max(2.0 ** (p - 1.0), 2.0 ** (q - 1.0))
    ac1 = abs(c1)
    if ac1 > 0:
        eta = min((q / (4 * K * ac1)) ** (1 / q), (p / (4 * K * ac1)) ** (1 / p))
        M = max(eta**-p, eta**-q)
    else:
        M = 0.0
    A = ac1 * (M + 1.0) + max(p, q)
    sb = build_symbols(grid)
    fh = np.asarray(force_hat)
    G = math.sqrt(float(np.sum(np.sum(np.abs(fh) ** 2, axis=1) * sb.inv_xi2)) / grid.N) / (math.pi * math.sqrt(2.0))
    if p < 2:
        G *= grid.N ** (1.0 / p - 0.5)
    a = (4.0 / 3.0) * K * ac1 * G
    ca = a * (2 * a / p) ** (1 / (p - 1)) * (1 - 1 / p) if a > 0 else 0.0
    pairing = float(np.dot(np.asarray(eps0, float).reshape(-1), np.asarray(sig0, float).reshape(-1)))
    C1 = (8.0 / 3.0) * K * A
    C2 = (8.0 / 3.0) * K * (c1 * pairing + c2) + 2.0 * ca
    return CoercivityBound(C1, C2)


class DataDrivenSolver(BaseEstimator):
    """Estimator-style front end.

    ``fit(X)`` takes the material data as an array of shape ``(N, 2m)``
    (strain coordinates, then stress coordinates) and builds the nearest-point
    index; ``solve`` runs the staggered scheme for a given force and means.
    """

    def __init__(
        self,
        p=2.0,
        dim=2,
        grid_n=16,
        regime=INERTIALESS,
        functional_rel=1e-8,
        assignment_stall=2,
        max_outer=200,
        picard_damping=0.7,
        picard_max=50,
    ):
        self.p = p
        self.dim = dim
        self.grid_n = grid_n
        self.regime = regime
        self.functional_rel = functional_rel
        self.assignment_stall = assignment_stall
        self.max_outer = max_outer
        self.picard_damping = picard_damping
        self.picard_max = picard_max

    def fit(self, X, y=None):
        m = sym_dim(self.dim)
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if X.shape[1] != 2 * m:
            raise ValueError(f"expected {2 * m} columns (strain then stress coordinates), got {X.shape[1]}")
        self.exp_ = Exponents(self.p)
        self.dataset_ = MaterialDataSet(X[:, :m], X[:, m:], self.exp_)
        self.grid_ = TorusGrid(self.dim, self.grid_n)
        self.n_features_in_ = X.shape[1]
        return self

    def _tol(self) -> Tolerances:
        return Tolerances(
            functional_rel=self.functional_rel,
            assignment_stall=self.assignment_stall,
            max_outer=self.max_outer,
            picard_damping=self.picard_damping,
            picard_max=self.picard_max,
        )

    def solve(self, force=None, eps0=None, sig0=None) -> SolveReport:
        check_is_fitted(self, "dataset_")
        spec = ProblemSpec(
            self.grid_, self.exp_, self.dataset_, force, eps0, sig0, regime=self.regime, tol=self._tol()
        )
        self.report_ = solve(spec)
        return self.report_

    def score(self, X=None, y=None) -> float:
        """Negative final functional value of the last solve."""
        check_is_fitted(self, "report_")
        return -self.report_.final_I
