"""Material data sets in Y x Y: generation, exact nearest-point queries,
data-convergence estimators and coercivity certificates."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .laws import ConstitutiveLaw, HerschelBulkley, law_from_dict
from .phase import Exponents, PhasePoint, pq_dist_coords, sym_dim
from .rng import stream

_TIE_RTOL = 1e-12
_PREFILTER_K = 8
_QUERY_CHUNK = 4096
_RADIUS_START = 1.0 / 64.0
_RADIUS_GROWTH = 4.0


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DD_FLUIDS_THREADS", "1")))
    except ValueError:
        return 1


class EmptyDataSet(ValueError):
    pass


class MaterialDataSet:
    """A finite, immutable cloud of phase points with an exact nearest-point index.

    ``eps`` and ``sig`` are coordinate arrays of shape ``(N, m)``.  Queries use
    a Euclidean kd-tree as a candidate prefilter; the final choice is made on
    the exact ``dist_pq`` value, ties going to the lowest index.
    """

    def __init__(self, eps, sig, exp: Exponents, meta: dict | None = None):
        eps = np.array(eps, dtype=float, ndmin=2)
        sig = np.array(sig, dtype=float, ndmin=2)
        if eps.shape != sig.shape:
            raise ValueError(f"strain and stress arrays differ in shape: {eps.shape} vs {sig.shape}")
        if eps.shape[0] == 0:
            raise EmptyDataSet("material data set must be nonempty")
        m = eps.shape[1]
        self.dim = 2 if m == 2 else 3
        if sym_dim(self.dim) != m:
            raise ValueError(f"coordinate length {m} does not match a spatial dimension")
        for a in (eps, sig):
            a.setflags(write=False)
        self.eps = eps
        self.sig = sig
        self.exp = exp
        self.meta = dict(meta or {})
        self._tree = None
        self._scaled: dict = {}

    def __len__(self) -> int:
        return self.eps.shape[0]

    @property
    def m(self) -> int:
        return self.eps.shape[1]

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([self.eps, self.sig], axis=1)

    def point(self, i: int) -> PhasePoint:
        return PhasePoint.from_coords(self.eps[i], self.sig[i], self.dim)

    def magnitudes(self) -> np.ndarray:
        """``dist_pq(z, 0)`` for every stored point."""
        return pq_dist_coords(self.eps, self.sig, self.exp)

    def growth(self) -> np.ndarray:
        """``1 + |eps|^p + |sig|^q`` for every stored point."""
        p, q = self.exp.p, self.exp.q
        return 1.0 + np.linalg.norm(self.eps, axis=1) ** p + np.linalg.norm(self.sig, axis=1) ** q

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def query(self, eps, sig) -> tuple[np.ndarray, np.ndarray]:
        """Nearest stored point for stacked query coordinates.

        Returns ``(index, dist)`` with the leading shape of the queries.
        """
        eps = np.asarray(eps, dtype=float)
        sig = np.asarray(sig, dtype=float)
        if eps.shape[-1] != self.m or sig.shape != eps.shape:
            raise ValueError(f"query coordinates must have trailing length {self.m}")
        lead = eps.shape[:-1]
        qe = eps.reshape(-1, self.m)
        qs = sig.reshape(-1, self.m)
        nq = qe.shape[0]
        if nq == 0:
            return np.zeros(lead, dtype=np.intp), np.zeros(lead)
        idx = np.empty(nq, dtype=np.intp)
        dist = np.empty(nq)
        # chunks bound the memory held by candidate lists from dense clouds
        for a in range(0, nq, _QUERY_CHUNK):
            b = min(nq, a + _QUERY_CHUNK)
            idx[a:b], dist[a:b] = self._query_block(qe[a:b], qs[a:b])
        return idx.reshape(lead), dist.reshape(lead)

    def _scaled_tree(self, j: int) -> cKDTree:
        """Tree over ``(eps, 2^j sig)``; used when stress and strain radii differ."""
        if j not in self._scaled:
            self._scaled[j] = cKDTree(np.concatenate([self.eps, self.sig * 2.0**j], axis=1))
        return self._scaled[j]

    def _ball(self, qe, qs, t) -> list:
        """Indices of every point within ``dist_pq <= t`` of each query (plus some extras)."""
        workers = _threads()
        if self.exp.is_quadratic():
            Z = np.concatenate([qe, qs], axis=1)
            return self.tree.query_ball_point(Z, np.sqrt(2.0 * t), workers=workers, return_sorted=False)
        # every candidate has |de| <= re and |ds| <= rs; with 2^j <= re/rs the
        # scaled ball of radius sqrt(2) re contains that box
        re = (self.exp.p * t) ** (1.0 / self.exp.p)
        rs = (self.exp.q * t) ** (1.0 / self.exp.q)
        j = np.clip(np.floor(np.log2(re / rs)), -60, 60).astype(int)
        out = [None] * len(t)
        for jj in np.unique(j):
            sel = np.flatnonzero(j == jj)
            Zs = np.concatenate([qe[sel], qs[sel] * 2.0**jj], axis=1)
            found = self._scaled_tree(int(jj)).query_ball_point(
                Zs, np.sqrt(2.0) * re[sel] * (1.0 + 1e-9), workers=workers, return_sorted=False
            )
            for i, c in zip(sel, found):
                out[i] = c
        return out

    def _query_block(self, qe, qs):
        nq = qe.shape[0]
        Z = np.concatenate([qe, qs], axis=1)
        k = min(_PREFILTER_K, len(self))
        _, jk = self.tree.query(Z, k=k, workers=_threads())
        jk = np.asarray(jk).reshape(nq, k)
        dk = pq_dist_coords(qe[:, None, :] - self.eps[jk], qs[:, None, :] - self.sig[jk], self.exp)
        bound = dk.min(axis=1) * (1.0 + 1e-9) + 1e-300
        idx = np.empty(nq, dtype=np.intp)
        dist = np.empty(nq)
        # grow the search radius from a fraction of the bound; a query is settled
        # once its best candidate lies inside the searched radius
        t = bound * _RADIUS_START
        todo = np.arange(nq)
        while todo.size:
            t_cur = np.minimum(t[todo], bound[todo])
            cands = self._ball(qe[todo], qs[todo], t_cur)
            lengths = np.fromiter((len(c) for c in cands), dtype=np.intp, count=todo.size)
            flat = np.fromiter((j for c in cands for j in c), dtype=np.intp, count=int(lengths.sum()))
            owner = np.repeat(np.arange(todo.size), lengths)
            dflat = pq_dist_coords(qe[todo][owner] - self.eps[flat], qs[todo][owner] - self.sig[flat], self.exp)
            best_d = np.full(todo.size, np.inf)
            best_i = np.full(todo.size, -1, dtype=np.intp)
            if flat.size:
                order = np.lexsort((flat, dflat, owner))
                first = np.ones(order.size, dtype=bool)
                first[1:] = owner[order][1:] != owner[order][:-1]
                o = order[first]
                best_d[owner[o]] = dflat[o]
                best_i[owner[o]] = flat[o]
            done = best_d <= t_cur
            idx[todo[done]] = best_i[done]
            dist[todo[done]] = best_d[done]
            t[todo] = t_cur * _RADIUS_GROWTH
            todo = todo[~done]
        return idx, dist

    def nearest(self, z: PhasePoint) -> tuple[int, PhasePoint, float]:
        if z.dim != self.dim:
            raise ValueError(f"dimension mismatch: query d={z.dim}, data d={self.dim}")
        idx, dist = self.query(z.eps.coords[None], z.sig.coords[None])
        i = int(idx[0])
        return i, self.point(i), float(dist[0])

    def subset(self, mask) -> "MaterialDataSet":
        return MaterialDataSet(self.eps[mask], self.sig[mask], self.exp, self.meta)

    def save(self, path) -> None:
        """CSV with ``d,p,q`` header and metadata line, then one phase point per row.

        Metadata goes to a JSON sidecar ``<path>.json``.
        """
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d", "p", "q"])
            w.writerow([str(self.dim), f"{self.exp.p:.17g}", f"{self.exp.q:.17g}"])
            for e, s in zip(self.eps, self.sig):
                w.writerow([str(self.dim)] + [f"{v:.17g}" for v in e] + [f"{v:.17g}" for v in s])
        with open(str(path) + ".json", "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True, default=_json_default)

    @classmethod
    def load(cls, path) -> "MaterialDataSet":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3 or rows[0] != ["d", "p", "q"]:
            raise ValueError(f"{path}: not a material data set file")
        d = int(rows[1][0])
        exp = Exponents(float(rows[1][1]))
        m = sym_dim(d)
        vals = np.array([[float(v) for v in r[1:]] for r in rows[2:]])
        if vals.shape[1] != 2 * m:
            raise ValueError(f"{path}: expected {2 * m} coordinates per row")
        meta = {}
        side = Path(str(path) + ".json")
        if side.exists():
            meta = json.loads(side.read_text())
        return cls(vals[:, :m], vals[:, m:], exp, meta)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def sphere_directions(m: int, n: int, seed: int) -> np.ndarray:
    """``n`` quasi-uniform unit vectors in R^m (scrambled Halton through the Gaussian map)."""
    if m == 2:
        # the circle is parameterized exactly; a 1-d low-discrepancy set in angle
        u = qmc.Halton(d=1, scramble=True, seed=stream(seed, "dirs")).random(n)[:, 0]
        theta = 2 * np.pi * u
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    u = qmc.Halton(d=m, scramble=True, seed=stream(seed, "dirs")).random(n)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _add_noise(eps, sig, noise, noise_mode, rng):
    if noise == 0:
        return sig
    m = sig.shape[1]
    g = rng.standard_normal(sig.shape)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    u = rng.uniform(size=sig.shape[0])
    if noise_mode == "relative":
        zn = np.sqrt(np.sum(eps**2, axis=1) + np.sum(sig**2, axis=1))
        # scaled so that |eta| <= noise * (1 + |z_noisy|) as well
        mag = noise * (1.0 + zn) / (1.0 + noise) * u
    elif noise_mode == "absolute":
        mag = noise * u
    else:
        raise ValueError(f"noise_mode must be 'relative' or 'absolute', got {noise_mode!r}")
    return sig + mag[:, None] * g[:, :m]


def sample_law(
    law: ConstitutiveLaw,
    n_dirs: int,
    n_mags: int,
    R: float,
    noise: float = 0.0,
    noise_mode: str = "relative",
    seed: int = 0,
    exp: Exponents | None = None,
) -> MaterialDataSet:
    """Sample the graph of ``law`` on directions x geometric magnitudes in ``(0, R]``.

    Noise perturbs the stress component.  Yield-stress laws additionally
    receive the segment ``{(0, sig): |sig| <= a}`` sampled on the same
    directions.
    """
    if n_dirs < 1 or n_mags < 1:
        raise ValueError("n_dirs and n_mags must be >= 1")
    if not R > 0:
        raise ValueError(f"range R must be > 0, got {R}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    exp = exp or Exponents(2.0)
    m = sym_dim(law.dim)
    omega = sphere_directions(m, n_dirs, seed)
    mags = np.geomspace(R * 1e-3, R, n_mags) if n_mags > 1 else np.array([R])
    eps = (mags[:, None, None] * omega[None, :, :]).reshape(-1, m)
    sig = law.stress(eps)
    a = law.yield_stress
    if a > 0:
        rad = np.linspace(0.0, a, n_mags + 1)[1:] if n_mags > 1 else np.array([a])
        seg = (rad[:, None, None] * omega[None, :, :]).reshape(-1, m)
        eps = np.concatenate([np.zeros((1, m)), np.zeros_like(seg), eps])
        sig = np.concatenate([np.zeros((1, m)), seg, sig])
    sig = _add_noise(eps, sig, noise, noise_mode, stream(seed, "noise"))
    meta = {
        "law": law.params(),
        "noise": noise,
        "noise_mode": noise_mode,
        "error_a_n": noise,
        "range_R_n": R,
        "n_dirs": n_dirs,
        "n_mags": n_mags,
        "seed": seed,
    }
    return MaterialDataSet(eps, sig, exp, meta)


def graph_lattice(
    law: ConstitutiveLaw,
    h: float,
    R: float,
    exp: Exponents | None = None,
    ball: bool = False,
    lo=None,
    hi=None,
) -> MaterialDataSet:
    """Noiseless graph data on a strain lattice ``h Z^m`` clipped to ``[-R, R]^m``.

    ``lo``/``hi`` replace the cube by a coordinate box; ``ball`` clips to
    ``|eps| <= R`` instead.  For yield-stress laws the segment ``D_0`` is
    added on the same lattice in stress space.
    """
    if not (h > 0 and R > 0):
        raise ValueError("lattice spacing and range must be positive")
    exp = exp or Exponents(2.0)
    m = sym_dim(law.dim)
    lo = np.full(m, -R) if lo is None else np.broadcast_to(np.asarray(lo, dtype=float), (m,))
    hi = np.full(m, R) if hi is None else np.broadcast_to(np.asarray(hi, dtype=float), (m,))
    if np.any(hi < lo):
        raise ValueError("lattice box has hi < lo")
    axes = [np.arange(np.ceil(a / h - 1e-9), np.floor(b / h + 1e-9) + 1) * h for a, b in zip(lo, hi)]
    eps = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    if ball:
        eps = eps[np.linalg.norm(eps, axis=1) <= R + 1e-12 * R]
    if len(eps) == 0:
        raise EmptyDataSet("lattice box contains no lattice point")
    sig = law.stress(eps)
    a = law.yield_stress
    if a > 0:
        ka = int(np.floor(a / h + 1e-12))
        ax = np.arange(-ka, ka + 1) * h
        seg = np.stack(np.meshgrid(*([ax] * m), indexing="ij"), axis=-1).reshape(-1, m)
        seg = seg[np.linalg.norm(seg, axis=1) <= a * (1 + 1e-12)]
        seg = seg[np.linalg.norm(seg, axis=1) > 0]
        eps = np.concatenate([np.zeros_like(seg), eps])
        sig = np.concatenate([seg, sig])
    meta = {"law": law.params(), "noise": 0.0, "error_a_n": 0.0, "range_R_n": R, "lattice_h": h}
    return MaterialDataSet(eps, sig, exp, meta)


def dataset_from_dict(spec: dict, dim: int, exp: Exponents, seed: int = 0) -> MaterialDataSet:
    """Build a data set from its declarative config form."""
    spec = dict(spec)
    kind = spec.pop("kind", "sample")
    if kind == "file":
        return MaterialDataSet.load(spec["path"])
    law = law_from_dict(spec.pop("law"), dim)
    if kind == "sample":
        return sample_law(
            law,
            int(spec.get("n_dirs", 64)),
            int(spec.get("n_mags", 64)),
            float(spec.get("R", 1.0)),
            float(spec.get("noise", 0.0)),
            spec.get("noise_mode", "relative"),
            int(spec.get("seed", seed)),
            exp,
        )
    if kind == "lattice":
        return graph_lattice(law, float(spec["h"]), float(spec.get("R", 1.0)), exp, bool(spec.get("ball", False)))
    raise ValueError(f"unknown data set kind {kind!r}")


@dataclass
class ConvergenceReport:
    a_hat: float
    b_hat: float
    R_used: float
    S_used: float
    worst_witnesses: dict = field(default_factory=dict)
    a_hat_pseudo: float = 0.0
    b_hat_pseudo: float = 0.0
    n_probed_a: int = 0
    n_probed_b: int = 0

    @property
    def empty_range(self) -> bool:
        return self.n_probed_a == 0 or self.n_probed_b == 0

    def as_dict(self) -> dict:
        return {
            "a_hat": self.a_hat,
            "b_hat": self.b_hat,
            "R_used": self.R_used,
            "S_used": self.S_used,
            "a_hat_pseudo": self.a_hat_pseudo,
            "b_hat_pseudo": self.b_hat_pseudo,
            "n_probed_a": self.n_probed_a,
            "n_probed_b": self.n_probed_b,
            "witnesses": {
                k: (None if v is None else v.as_array().tolist()) for k, v in self.worst_witnesses.items()
            },
        }


def _one_sided(probe: MaterialDataSet, target: MaterialDataSet, limit: float):
    mags = probe.magnitudes()
    mask = mags < limit
    if not mask.any():
        return 0.0, 0.0, None, 0
    _, dist = target.query(probe.eps[mask], probe.sig[mask])
    ratio = dist / probe.growth()[mask]
    pseudo = dist / (1.0 + mags[mask])
    i = int(np.argmax(ratio))
    where = np.flatnonzero(mask)[i]
    return float(ratio[i]), float(pseudo.max()), probe.point(int(where)), int(mask.sum())


def _check_pair(dn: MaterialDataSet, d_ref: MaterialDataSet):
    if dn.dim != d_ref.dim:
        raise ValueError(f"dimension mismatch: {dn.dim} vs {d_ref.dim}")
    if abs(dn.exp.p - d_ref.exp.p) > 1e-12:
        raise ValueError("data sets use different exponents")


def check_convergence_eq(dn: MaterialDataSet, d_ref: MaterialDataSet, R: float, S: float) -> ConvergenceReport:
    """Estimate the constants of data convergence on bounded sets.

    ``a_hat`` is the worst ratio ``dist(z, dn) / (1 + |eps|^p + |sig|^q)`` over
    reference points with ``dist(z, 0) < R``; ``b_hat`` the same with the roles
    swapped over points of ``dn`` with ``dist(z, 0) < S``.  The ``*_pseudo``
    fields use the normalization ``1 + dist(z, 0)`` instead.
    """
    _check_pair(dn, d_ref)
    a, a_ps, wa, na = _one_sided(d_ref, dn, R)
    b, b_ps, wb, nb = _one_sided(dn, d_ref, S)
    return ConvergenceReport(a, b, R, S, {"a": wa, "b": wb}, a_ps, b_ps, na, nb)


def check_convergence_bd(dn: MaterialDataSet, d_ref: MaterialDataSet) -> ConvergenceReport:
    return check_convergence_eq(dn, d_ref, np.inf, np.inf)


@dataclass(frozen=True)
class CoercivityCertificate:
    """``c1 eps.sig + c2 > |eps|^p + |sig|^q`` holds on every point of the set."""

    c1: float
    c2: float
    margin: float


@dataclass(frozen=True)
class NotCoercive:
    reason: str
    flagged_c1: tuple = ()


def _coercivity_excess(ds: MaterialDataSet, c1: float) -> np.ndarray:
    pairing = np.sum(ds.eps * ds.sig, axis=1)
    return ds.growth() - 1.0 - c1 * pairing


def coercivity_certificate(ds: MaterialDataSet, c1_grid) -> CoercivityCertificate | NotCoercive:
    """Search ``c1_grid`` for the pair ``(c1, c2)`` with the smallest ``c2``.

    A candidate is discarded when its required ``c2`` grows superlinearly with
    magnitude: the points are split into magnitude terciles and the candidate
    is flagged if the top tercile needs more than ten times the ``c2`` of the
    middle one.  This is a heuristic, not a proof of non-coercivity.
    """
    grid = [float(c) for c in c1_grid]
    if not grid:
        raise ValueError("c1_grid must be nonempty")
    order = np.argsort(ds.magnitudes(), kind="stable")
    n = len(order)
    mid_idx = order[n // 3 : 2 * n // 3] if n >= 3 else order
    top_idx = order[2 * n // 3 :] if n >= 3 else order
    best = None
    flagged = []
    for c1 in grid:
        h = _coercivity_excess(ds, c1)
        if n >= 3:
            scale = 1e-12 * (1.0 + float(np.max(ds.growth())))
            mid = max(float(h[mid_idx].max()), scale)
            top = float(h[top_idx].max())
            if top > 10.0 * mid:
                flagged.append(c1)
                continue
        need = float(h.max())
        c2 = max(need, 0.0)
        c2 += 1e-9 * (1.0 + abs(c2))
        if best is None or c2 < best[1] * (1.0 - 1e-9) - 1e-300:
            best = (c1, c2, float(np.min(c2 - h)))
    if best is None:
        return NotCoercive("every candidate c1 needs a superlinearly growing c2", tuple(flagged))
    return CoercivityCertificate(*best)
