"""Linear algebra on the local phase space Y x Y.

Y is the space of symmetric trace-free d x d matrices.  Elements are stored
as coordinates in a fixed orthonormal basis of Y, so the Frobenius pairing is
the Euclidean dot product of coordinate vectors.  Every function here that has
a ``*_coords`` twin works on stacked coordinate arrays of shape ``(..., m)``
with ``m = d(d+1)/2 - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TRACE_TOL = 1e-14
EXPONENT_TOL = 1e-12
YOUNG_TOL = 1e-12


def sym_dim(d: int) -> int:
    """Dimension of Y for spatial dimension ``d``."""
    if d not in (2, 3):
        raise ValueError(f"spatial dimension must be 2 or 3, got {d}")
    return d * (d + 1) // 2 - 1


@lru_cache(maxsize=None)
def _basis(d: int) -> np.ndarray:
    s2, s6 = np.sqrt(2.0), np.sqrt(6.0)
    if d == 2:
        mats = [
            np.diag([1.0, -1.0]) / s2,
            np.array([[0.0, 1.0], [1.0, 0.0]]) / s2,
        ]
    elif d == 3:
        mats = [np.diag([1.0, -1.0, 0.0]) / s2, np.diag([1.0, 1.0, -2.0]) / s6]
        for i, j in ((0, 1), (0, 2), (1, 2)):
            e = np.zeros((3, 3))
            e[i, j] = e[j, i] = 1.0 / s2
            mats.append(e)
    else:
        raise ValueError(f"spatial dimension must be 2 or 3, got {d}")
    out = np.array(mats)
    out.setflags(write=False)
    return out


def basis(d: int) -> np.ndarray:
    """Orthonormal basis of Y as an array of shape ``(m, d, d)``."""
    return _basis(d)


def to_coords(mat: np.ndarray) -> np.ndarray:
    """Coordinates of (stacked) matrices; the trace-free symmetric part is kept."""
    mat = np.asarray(mat, dtype=float)
    return np.einsum("...ij,cij->...c", mat, _basis(mat.shape[-1]))


def from_coords(coords: np.ndarray, d: int) -> np.ndarray:
    coords = np.asarray(coords)
    return np.einsum("...c,cij->...ij", coords, _basis(d))


def dim_from_m(m: int) -> int:
    if m == 2:
        return 2
    if m == 5:
        return 3
    raise ValueError(f"no spatial dimension has a {m}-dimensional Y")


class TracelessSym:
    """An immutable element of Y."""

    __slots__ = ("_coords", "dim")

    def __init__(self, coords, dim: int | None = None):
        c = np.array(coords, dtype=float).reshape(-1)
        if dim is None:
            dim = dim_from_m(c.size)
        if c.size != sym_dim(dim):
            raise ValueError(f"expected {sym_dim(dim)} coordinates for d={dim}, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "_coords", c)
        object.__setattr__(self, "dim", dim)

    def __setattr__(self, name, value):
        raise AttributeError("TracelessSym is immutable")

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @classmethod
    def from_matrix(cls, mat) -> "TracelessSym":
        mat = np.asarray(mat, dtype=float)
        d = mat.shape[0]
        if mat.shape != (d, d):
            raise ValueError("expected a square matrix")
        scale = max(1.0, np.abs(mat).max())
        if not np.allclose(mat, mat.T, atol=1e-12 * scale):
            raise ValueError("matrix is not symmetric")
        if abs(np.trace(mat)) > 1e-12 * scale:
            raise ValueError("matrix is not trace-free")
        return cls(to_coords(mat), d)

    @classmethod
    def zero(cls, d: int) -> "TracelessSym":
        return cls(np.zeros(sym_dim(d)), d)

    def matrix(self) -> np.ndarray:
        return from_coords(self._coords, self.dim)

    def norm(self) -> float:
        return float(np.linalg.norm(self._coords))

    def _check(self, other: "TracelessSym") -> None:
        if not isinstance(other, TracelessSym):
            raise TypeError("expected TracelessSym")
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        self._check(other)
        return TracelessSym(self._coords + other._coords, self.dim)

    def __sub__(self, other):
        self._check(other)
        return TracelessSym(self._coords - other._coords, self.dim)

    def __neg__(self):
        return TracelessSym(-self._coords, self.dim)

    def __mul__(self, scalar):
        return TracelessSym(float(scalar) * self._coords, self.dim)

    __rmul__ = __mul__

    def __eq__(self, other):
        return (
            isinstance(other, TracelessSym)
            and other.dim == self.dim
            and np.array_equal(other._coords, self._coords)
        )

    def __hash__(self):
        return hash((self.dim, self._coords.tobytes()))

    def __repr__(self):
        return f"TracelessSym({self._coords.tolist()}, dim={self.dim})"


def diag2(a: float, b: float) -> TracelessSym:
    """Convenience constructor for ``diag(a, b)`` in d=2 (requires a = -b)."""
    return TracelessSym.from_matrix(np.diag([a, b]))


def offdiag2(c: float) -> TracelessSym:
    """``c * (e1 (x) e2 + e2 (x) e1)`` in d=2."""
    return TracelessSym.from_matrix(np.array([[0.0, c], [c, 0.0]]))


@dataclass(frozen=True)
class PhasePoint:
    eps: TracelessSym
    sig: TracelessSym

    def __post_init__(self):
        if self.eps.dim != self.sig.dim:
            raise ValueError(f"strain and stress dimensions differ: {self.eps.dim} vs {self.sig.dim}")

    @property
    def dim(self) -> int:
        return self.eps.dim

    @classmethod
    def from_coords(cls, eps, sig, dim: int | None = None) -> "PhasePoint":
        return cls(TracelessSym(eps, dim), TracelessSym(sig, dim))

    @classmethod
    def zero(cls, d: int) -> "PhasePoint":
        return cls(TracelessSym.zero(d), TracelessSym.zero(d))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.eps.coords, self.sig.coords])

    def to_row(self) -> list[str]:
        """Flat CSV row ``[d, eps coords..., sig coords...]`` with 17 significant digits."""
        return [str(self.dim)] + [f"{v:.17g}" for v in self.as_array()]

    @classmethod
    def from_row(cls, row) -> "PhasePoint":
        d = int(row[0])
        vals = np.array([float(v) for v in row[1:]])
        m = sym_dim(d)
        if vals.size != 2 * m:
            raise ValueError(f"expected {2 * m} coordinates for d={d}, got {vals.size}")
        return cls.from_coords(vals[:m], vals[m:], d)


@dataclass(frozen=True)
class Exponents:
    """Conjugate exponents with ``1/p + 1/q = 1`` and ``alpha = p/q = p - 1``."""

    p: float

    def __post_init__(self):
        p = float(self.p)
        if not np.isfinite(p) or p <= 1.0:
            raise ValueError(f"exponent p must be > 1, got {self.p}")
        object.__setattr__(self, "p", p)

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def alpha(self) -> float:
        return self.p - 1.0

    @property
    def pmax(self) -> float:
        return max(self.p, self.q)

    @classmethod
    def from_q(cls, q: float) -> "Exponents":
        return cls(q / (q - 1.0))

    def is_quadratic(self) -> bool:
        return abs(self.p - 2.0) <= EXPONENT_TOL


def inner(a: TracelessSym, b: TracelessSym) -> float:
    """Frobenius pairing of two elements of Y."""
    a._check(b)
    return float(a.coords @ b.coords)


def pq_dist_coords(de: np.ndarray, ds: np.ndarray, exp: Exponents) -> np.ndarray:
    """``(1/p)|de|^p + (1/q)|ds|^q`` for stacked coordinate differences."""
    ne = np.linalg.norm(de, axis=-1)
    ns = np.linalg.norm(ds, axis=-1)
    return ne**exp.p / exp.p + ns**exp.q / exp.q


def dist_pq(z1: PhasePoint, z2: PhasePoint, exp: Exponents) -> float:
    if z1.dim != z2.dim:
        raise ValueError(f"dimension mismatch: {z1.dim} vs {z2.dim}")
    return float(
        pq_dist_coords(z1.eps.coords - z2.eps.coords, z1.sig.coords - z2.sig.coords, exp)
    )


def metric_d(z1: PhasePoint, z2: PhasePoint, exp: Exponents) -> float:
    """The metric obtained from ``dist_pq`` by the ``max(p, q)``-th root."""
    return dist_pq(z1, z2, exp) ** (1.0 / exp.pmax)


def magnitude(z: PhasePoint, exp: Exponents) -> float:
    """``dist_pq(z, 0)``; used only as a magnitude functional."""
    return dist_pq(z, PhasePoint.zero(z.dim), exp)


def young_defect_coords(eps: np.ndarray, sig: np.ndarray, exp: Exponents) -> np.ndarray:
    ne = np.linalg.norm(eps, axis=-1)
    ns = np.linalg.norm(sig, axis=-1)
    return ne**exp.p / exp.p + ns**exp.q / exp.q - np.sum(eps * sig, axis=-1)


def young_defect(z: PhasePoint, exp: Exponents) -> float:
    """``(1/p)|eps|^p + (1/q)|sig|^q - eps.sig``; zero exactly on the power-law graph."""
    return float(young_defect_coords(z.eps.coords, z.sig.coords, exp))


def power_law_stress_coords(eps: np.ndarray, exp: Exponents) -> np.ndarray:
    """``|eps|^(alpha-1) eps``, the stress at which the Young defect vanishes."""
    ne = np.linalg.norm(eps, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(ne > 0, ne ** (exp.alpha - 1.0), 0.0)
    return scale * eps
