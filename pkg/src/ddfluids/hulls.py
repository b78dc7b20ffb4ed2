"""Separation certificates for monotone constitutive sets and the
characteristic cone of the strain/stress constraint pair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .laws import ConstitutiveLaw, Newtonian, PowerLaw
from .phase import Exponents, PhasePoint, TracelessSym, from_coords, sym_dim, to_coords
from .spectral import _ray_bases, sym_product

WITNESS_T = np.geomspace(1e-4, 10.0, 60)
CONE_TOL = 1e-10
RANK_TOL = 1e-10

NEWTONIAN_QUADRATIC = "NewtonianQuadratic"
POWER_LAW_YOUNG = "PowerLawYoung"
MONOTONE_AFFINE = "MonotoneAffine"


class WitnessSearchFailed(RuntimeError):
    pass


class HullRefused(ValueError):
    """Raised for laws whose hull is not known to coincide with the data set."""


@dataclass(frozen=True)
class SeparationCertificate:
    kind: str
    value: float
    z0: PhasePoint | None = None
    t: float | None = None
    coef: float | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value, "z0": None, "t": self.t}
        if self.z0 is not None:
            out["z0"] = self.z0.as_array().tolist()
        return out


def newtonian_dist(z: PhasePoint) -> float:
    """``(1/2)|eps - sig|^2``, the distance to the graph ``sig = eps``."""
    return 0.5 * float(np.sum((z.eps.coords - z.sig.coords) ** 2))


def monotone_separator(z: PhasePoint, z0: PhasePoint) -> float:
    """``-(eps - eps0).(sig - sig0)``."""
    return -float(np.dot(z.eps.coords - z0.eps.coords, z.sig.coords - z0.sig.coords))


def monotone_separator_coords(eps, sig, eps0, sig0) -> np.ndarray:
    return -np.sum((np.asarray(eps) - eps0) * (np.asarray(sig) - sig0), axis=-1)


def young_function(law: PowerLaw, exp: Exponents):
    """``c|eps|^p/p + c^(1-q)|sig|^q/q - eps.sig`` with ``c = 2 mu0``; zero exactly on the graph."""
    c = 2.0 * law.mu0
    p, q = exp.p, exp.q

    def f(eps, sig):
        ne = np.linalg.norm(eps, axis=-1)
        ns = np.linalg.norm(sig, axis=-1)
        return c * ne**p / p + c ** (1.0 - q) * ns**q / q - np.sum(np.asarray(eps) * sig, axis=-1)

    return f


def _is_young_law(law: ConstitutiveLaw, exp: Exponents) -> bool:
    if isinstance(law, Newtonian):
        return exp.is_quadratic()
    return isinstance(law, PowerLaw) and abs(law.alpha - exp.alpha) <= 1e-12


def set_defect(eps, sig, law: ConstitutiveLaw) -> np.ndarray:
    """Distance-like defect from the monotone data set (graph plus yield segment)."""
    eps = np.asarray(eps, dtype=float)
    sig = np.asarray(sig, dtype=float)
    graph = np.linalg.norm(sig - law.stress(eps), axis=-1)
    ne = np.linalg.norm(eps, axis=-1)
    seg = ne + np.maximum(np.linalg.norm(sig, axis=-1) - law.yield_stress, 0.0)
    return np.where(ne > 0, np.minimum(graph, seg), seg)


def certificate_function(cert: SeparationCertificate, law: ConstitutiveLaw, exp: Exponents):
    """The separating function behind a certificate, vectorized over coordinates."""
    if cert.kind == MONOTONE_AFFINE:
        e0, s0 = cert.z0.eps.coords, cert.z0.sig.coords
        return lambda eps, sig: monotone_separator_coords(eps, sig, e0, s0)
    if cert.kind == POWER_LAW_YOUNG:
        return young_function(law, exp)
    if cert.kind == NEWTONIAN_QUADRATIC:
        c = 2.0 * law.mu0
        return lambda eps, sig: 0.5 * np.sum((np.asarray(sig) - c * np.asarray(eps)) ** 2, axis=-1)
    raise ValueError(f"unknown certificate kind {cert.kind!r}")


def monotone_witness(z: PhasePoint, law: ConstitutiveLaw, t_grid=WITNESS_T) -> SeparationCertificate:
    """Scan ``eps_t = eps + t (sig - sig_c(eps))`` for a positive affine separator.

    For ``eps = 0`` the line ``eps_t = t sig/|sig|`` is used.
    """
    e, s = z.eps.coords, z.sig.coords
    ne = np.linalg.norm(e)
    if ne > 0:
        direction = s - law.stress(e)
        e_t = e[None, :] + t_grid[:, None] * direction[None, :]
    else:
        ns = np.linalg.norm(s)
        if ns == 0:
            raise WitnessSearchFailed("the origin lies on every monotone data set")
        e_t = t_grid[:, None] * (s / ns)[None, :]
    s_t = law.stress(e_t)
    vals = monotone_separator_coords(e[None, :], s[None, :], e_t, s_t)
    hit = np.flatnonzero(vals > 0)
    if hit.size == 0:
        raise WitnessSearchFailed(f"no positive separator on the t-grid (best {vals.max():.3e})")
    i = int(hit[0])
    z0 = PhasePoint.from_coords(e_t[i], s_t[i], z.dim)
    return SeparationCertificate(MONOTONE_AFFINE, float(vals[i]), z0, float(t_grid[i]))


def hull_membership(z: PhasePoint, law: ConstitutiveLaw, exp: Exponents, tol: float = 1e-10):
    """Decide membership of ``z`` in the hull of a monotone law's data set.

    Returns ``(inside, certificate)``; outside points always come with a
    certificate of positive value.
    """
    if z.dim != law.dim:
        raise ValueError(f"dimension mismatch: point d={z.dim}, law d={law.dim}")
    if not law.is_monotone():
        raise HullRefused(f"law {law.kind!r} is not monotone; its hull is not certified")
    defect = float(set_defect(z.eps.coords, z.sig.coords, law))
    if defect <= tol:
        return True, None
    if isinstance(law, Newtonian) and exp.is_quadratic():
        f = certificate_function(SeparationCertificate(NEWTONIAN_QUADRATIC, 0.0), law, exp)
        return False, SeparationCertificate(NEWTONIAN_QUADRATIC, float(f(z.eps.coords, z.sig.coords)))
    if isinstance(law, PowerLaw) and _is_young_law(law, exp):
        val = float(young_function(law, exp)(z.eps.coords, z.sig.coords))
        if val > 0:
            return False, SeparationCertificate(POWER_LAW_YOUNG, val)
    return False, monotone_witness(z, law)


@dataclass(frozen=True)
class ConeWitness:
    """``w1 = a (.) xi`` with ``a . xi = 0``; ``w2 = sum_k c_k b_k`` over a ``Y_xi^perp`` basis."""

    xi: np.ndarray
    a: np.ndarray
    perp_coords: np.ndarray
    perp_basis: np.ndarray
    pressure: float

    def reconstruct(self) -> tuple[np.ndarray, np.ndarray]:
        w1 = to_coords(sym_product(self.a, self.xi))
        return w1, self.perp_coords @ self.perp_basis


@dataclass(frozen=True)
class NotInCone:
    best_residual: float
    best_xi: np.ndarray = field(default=None)


def _cone_residual(w1, w2, xi):
    strain, perp = _ray_bases(np.atleast_2d(xi))
    P = strain[0].T @ strain[0]
    scale = 1.0 + np.linalg.norm(w1) + np.linalg.norm(w2)
    return (np.linalg.norm(w1 - P @ w1) + np.linalg.norm(w2 - (np.eye(len(w2)) - P) @ w2)) / scale, perp[0]


def fibonacci_directions(d: int, n: int) -> np.ndarray:
    """Deterministic quasi-uniform directions on a half circle / hemisphere."""
    k = np.arange(n) + 0.5
    if d == 2:
        th = np.pi * k / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    z = 1.0 - k / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    r = np.sqrt(1.0 - z**2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _candidates(w1, w2, d):
    """Directions that can carry ``(w1, w2)``: built from the eigenvectors of w1 and w2."""
    out = []
    if np.linalg.norm(w1) > 0:
        lam, vec = np.linalg.eigh(from_coords(w1, d))
        ep, em = vec[:, -1], vec[:, 0]
        out += [(ep + em) / np.sqrt(2.0), (ep - em) / np.sqrt(2.0)]
    # a negligible w1 is carried by directions adapted to w2
    if np.linalg.norm(w2) > 0:
        _, vec = np.linalg.eigh(from_coords(w2, d))
        out += list(vec.T)
    if not out:
        out.append(np.eye(d)[0])
    # canonical sign and a deterministic preference order among equivalent directions
    out = [v * (1.0 if v[np.argmax(np.abs(v) > 1e-12)] > 0 else -1.0) for v in out]
    return sorted(out, key=lambda v: tuple(-np.round(v, 12)))


def cone_membership(w1, w2, d: int, n_grid: int = 2000, tol: float = CONE_TOL):
    """Find ``xi`` with ``w1 in Y_xi`` and ``w2 in Y_xi^perp``, or report the best miss."""
    w1 = np.asarray(w1, dtype=float).reshape(sym_dim(d))
    w2 = np.asarray(w2, dtype=float).reshape(sym_dim(d))
    best = (np.inf, None, None)
    for xi in _candidates(w1, w2, d):
        r, perp = _cone_residual(w1, w2, xi)
        if r < best[0] and (best[0] > tol or r > tol):
            best = (r, xi, perp)
    if best[0] > tol:
        dirs = fibonacci_directions(d, n_grid)
        for xi in dirs:
            r, perp = _cone_residual(w1, w2, xi)
            if r < best[0]:
                best = (r, xi, perp)
    r, xi, perp = best
    if r > tol:
        return NotInCone(float(r), xi)
    xi = xi / np.linalg.norm(xi)
    S1 = from_coords(w1, d)
    a = 2.0 * S1 @ xi
    S2 = from_coords(w2, d)
    return ConeWitness(xi, a, perp @ w2, perp, float(xi @ S2 @ xi))


def closed_form_cone_test_2d(w1, w2, tol: float = CONE_TOL) -> bool:
    """In d = 2, ``Y_xi`` and ``Y_xi^perp`` are orthogonal lines in coordinates, so
    ``(w1, w2)`` is in the cone iff ``w1 . w2 = 0``."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    return abs(float(w1 @ w2)) <= tol * (1.0 + np.linalg.norm(w1) * np.linalg.norm(w2))


def cone_elements(xi: np.ndarray) -> np.ndarray:
    """Spanning vectors of ``(Y_xi x 0) + (0 x Y_xi^perp)`` in ``R^(2m)``, one row each."""
    strain, perp = _ray_bases(np.atleast_2d(np.asarray(xi, dtype=float)))
    m = strain.shape[-1]
    rows = [np.concatenate([b, np.zeros(m)]) for b in strain[0]]
    rows += [np.concatenate([np.zeros(m), b]) for b in perp[0]]
    return np.array(rows)


def spanning_check(d: int, n_dirs: int) -> bool:
    """Whether cone elements over ``n_dirs`` directions span ``Y x Y``."""
    if n_dirs < 1:
        raise ValueError("n_dirs must be >= 1")
    if d == 2:
        # golden-angle directions avoid the pairs 90 degrees apart, which share Y_xi
        th = np.pi * ((np.arange(n_dirs) * (np.sqrt(5.0) - 1.0) / 2.0) % 1.0)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        dirs = fibonacci_directions(d, n_dirs)
    M = np.vstack([cone_elements(xi) for xi in dirs])
    s = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    return rank == 2 * sym_dim(d)


def sample_on_set(law: ConstitutiveLaw, n: int, R: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Random points of the monotone data set: graph points plus yield-segment points."""
    m = sym_dim(law.dim)
    g = rng.standard_normal((n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    mag = R * rng.uniform(size=n)
    eps = g * mag[:, None]
    sig = law.stress(eps)
    a = law.yield_stress
    if a > 0:
        k = n // 4
        h = rng.standard_normal((k, m))
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        eps[:k] = 0.0
        sig[:k] = h * (a * rng.uniform(size=k))[:, None]
    return eps, sig


def sample_off_set(law: ConstitutiveLaw, n: int, R: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Points off the data set: stress perturbations of graph points and points above the yield cap."""
    m = sym_dim(law.dim)
    eps, sig = sample_on_set(law, n, R, rng)
    eps[np.linalg.norm(eps, axis=1) == 0] = 0.0
    d = rng.standard_normal((n, m))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    shift = (0.05 + rng.uniform(size=n)) * (1.0 + np.linalg.norm(sig, axis=1))
    sig = sig + d * shift[:, None]
    a = law.yield_stress
    if a > 0:
        k = n // 4
        h = rng.standard_normal((k, m))
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        eps[:k] = 0.0
        sig[:k] = h * (a * (1.05 + rng.uniform(size=k)))[:, None]
    return eps, sig


def point_from(eps, sig, d) -> PhasePoint:
    return PhasePoint(TracelessSym(eps, d), TracelessSym(sig, d))


def growth_constant(cert: SeparationCertificate, law: ConstitutiveLaw, exp: Exponents) -> float:
    """``C`` with ``|f(z)| <= C (1 + |eps|^p + |sig|^q)`` for the certificate's function ``f``."""
    p, q = exp.p, exp.q
    if cert.kind == MONOTONE_AFFINE:
        K = max(2.0 ** (p - 1.0), 2.0 ** (q - 1.0))
        e0, s0 = cert.z0.eps.coords, cert.z0.sig.coords
        return K * (1.0 + np.linalg.norm(e0) ** p + np.linalg.norm(s0) ** q)
    c = 2.0 * law.mu0
    if cert.kind == POWER_LAW_YOUNG:
        return max(c + 1.0, c ** (1.0 - q) + 1.0)
    if cert.kind == NEWTONIAN_QUADRATIC:
        return max(1.0, c * c)
    raise ValueError(f"unknown certificate kind {cert.kind!r}")
