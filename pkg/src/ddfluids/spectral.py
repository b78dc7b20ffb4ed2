"""Fields on the periodic d-torus and exact per-mode constraint projections.

Conventions: the forward transform uses ``exp(-2 pi i xi.x)`` on the unit
torus and is unitary (``norm="ortho"``), so a constant field ``c`` has zero
mode ``sqrt(N) c`` and Parseval holds node-mean for node-mean.  A derivative
``d/dx_j`` is the symbol ``2 pi i xi_j``, with Nyquist components set to zero.
Modes whose every nonzero component is a Nyquist component ("degenerate"
modes) carry no derivative at all: strain must vanish there and stress is
unconstrained.

Spectral arrays are flattened to shape ``(N, c)`` in ``fftn`` order; physical
arrays have shape ``(n,)*d + (c,)``.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .phase import sym_dim, to_coords

RESIDUAL_TOL = 1e-8
MEAN_FORCE_TOL = 1e-12
BINARY_MAGIC = b"DDFIELD1"


class ConstraintResidualTooLarge(ValueError):
    pass


class NonzeroMeanForce(ValueError):
    pass


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DD_FLUIDS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``n`` nodes per axis on the unit d-torus."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.d}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid size n must be even and >= 4, got {self.n}")

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def N(self) -> int:
        return self.n**self.d

    @property
    def m(self) -> int:
        return sym_dim(self.d)

    @property
    def weight(self) -> float:
        return 1.0 / self.N

    def coordinates(self) -> np.ndarray:
        """Node positions, shape ``(n,)*d + (d,)``."""
        ax = np.arange(self.n) / self.n
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1)

    def modes(self) -> np.ndarray:
        """Integer wave vectors in fft order, shape ``(N, d)``."""
        k = np.rint(np.fft.fftfreq(self.n) * self.n).astype(int)
        return np.stack(np.meshgrid(*([k] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)

    def hat(self, x: np.ndarray) -> np.ndarray:
        """Physical ``(n,)*d + (c,)`` array to spectral ``(N, c)``."""
        x = np.asarray(x)
        c = x.shape[self.d :]
        h = sfft.fftn(x, axes=tuple(range(self.d)), norm="ortho", workers=_workers())
        return h.reshape((self.N,) + c)

    def unhat(self, h: np.ndarray) -> np.ndarray:
        """Spectral ``(N, c)`` to the real part of the physical field."""
        c = h.shape[1:]
        x = sfft.ifftn(h.reshape(self.shape + c), axes=tuple(range(self.d)), norm="ortho", workers=_workers())
        return np.ascontiguousarray(x.real)

    def mean_l2(self, x: np.ndarray) -> float:
        """``sqrt(mean |x|^2)`` over nodes, for physical or spectral arrays alike."""
        x = np.asarray(x)
        return float(np.sqrt(np.sum(np.abs(x) ** 2) / self.N))


def _ray_key(k: np.ndarray) -> np.ndarray:
    """Primitive representative of the line through each integer vector."""
    g = np.gcd.reduce(np.abs(k), axis=1)
    g = np.where(g == 0, 1, g)
    r = k // g[:, None]
    first = np.argmax(r != 0, axis=1)
    sign = np.sign(r[np.arange(len(r)), first])
    sign = np.where(sign == 0, 1, sign)
    return r * sign[:, None]


def strain_directions(xi: np.ndarray) -> np.ndarray:
    """Orthonormal vectors ``a_k`` perpendicular to each row of ``xi``; shape ``(R, d-1, d)``."""
    xi = np.asarray(xi, dtype=float)
    u = xi / np.linalg.norm(xi, axis=1, keepdims=True)
    if xi.shape[1] == 2:
        return np.stack([-u[:, 1], u[:, 0]], axis=1)[:, None, :]
    axis = np.argmin(np.abs(u), axis=1)
    e = np.eye(3)[axis]
    a1 = np.cross(u, e)
    a1 /= np.linalg.norm(a1, axis=1, keepdims=True)
    a2 = np.cross(u, a1)
    return np.stack([a1, a2], axis=1)


def sym_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a (.) b = (a b^T + b a^T) / 2`` for stacked vectors."""
    outer = a[..., :, None] * b[..., None, :]
    return 0.5 * (outer + np.swapaxes(outer, -1, -2))


def _ray_bases(rays: np.ndarray):
    d = rays.shape[1]
    u = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    a = strain_directions(rays)
    mats = np.sqrt(2.0) * sym_product(a, u[:, None, :])
    strain = to_coords(mats)
    m = sym_dim(d)
    P = np.einsum("rki,rkj->rij", strain, strain)
    w, v = np.linalg.eigh(np.eye(m) - P)
    perp = np.swapaxes(v[:, :, d - 1 :], 1, 2)
    return strain, perp


@dataclass
class SymbolBasis:
    """Per-mode orthonormal bases of ``Y_xi`` and its complement in ``Y``.

    Bases are computed once per ray (primitive integer direction) and shared
    by all modes on that ray.  ``mode_strain[j]`` holds the ``Y_xi`` basis of
    mode ``j`` as rows of coordinates and is zero at the zero mode and at
    degenerate modes.
    """

    grid: TorusGrid
    k: np.ndarray
    xi: np.ndarray
    zero: int
    degenerate: np.ndarray
    rays: np.ndarray
    ray_index: np.ndarray
    ray_strain: np.ndarray
    ray_perp: np.ndarray

    @cached_property
    def xi2(self) -> np.ndarray:
        return np.sum(self.xi**2, axis=1)

    @cached_property
    def active(self) -> np.ndarray:
        """Modes that carry a derivative."""
        return self.ray_index >= 0

    @cached_property
    def inv_xi2(self) -> np.ndarray:
        out = np.zeros_like(self.xi2)
        out[self.active] = 1.0 / self.xi2[self.active]
        return out

    @cached_property
    def mode_strain(self) -> np.ndarray:
        out = np.zeros((self.grid.N, self.grid.d - 1, self.grid.m))
        out[self.active] = self.ray_strain[self.ray_index[self.active]]
        return out

    def strain_basis(self, j: int) -> np.ndarray:
        """``Y_xi`` basis rows for mode index ``j``; empty where no derivative acts."""
        r = self.ray_index[j]
        return self.ray_strain[r] if r >= 0 else np.zeros((0, self.grid.m))

    def perp_basis(self, j: int) -> np.ndarray:
        r = self.ray_index[j]
        return self.ray_perp[r] if r >= 0 else np.eye(self.grid.m)

    def project_Yxi(self, c: np.ndarray) -> np.ndarray:
        """Per-mode orthogonal projection of ``(N, m)`` coefficients onto ``Y_xi``."""
        B = self.mode_strain
        return np.einsum("nkm,nk->nm", B, np.einsum("nkm,nm->nk", B, c))

    def pressure_symbol(self, sig_hat: np.ndarray) -> np.ndarray:
        """``xi^T sig xi / |xi|^2`` per mode (zero where no derivative acts)."""
        S = from_coords_stack(sig_hat, self.grid.d)
        return np.einsum("ni,nij,nj->n", self.xi, S, self.xi) * self.inv_xi2


def from_coords_stack(c: np.ndarray, d: int) -> np.ndarray:
    from .phase import basis

    return np.einsum("...c,cij->...ij", c, basis(d))


def to_coords_stack(mats: np.ndarray) -> np.ndarray:
    return to_coords(mats.real) + 1j * to_coords(mats.imag) if np.iscomplexobj(mats) else to_coords(mats)


_SYMBOL_CACHE: dict = {}


def build_symbols(grid: TorusGrid) -> SymbolBasis:
    key = (grid.d, grid.n)
    if key in _SYMBOL_CACHE:
        return _SYMBOL_CACHE[key]
    k = grid.modes()
    kef = np.where(np.abs(k) == grid.n // 2, 0, k)
    nz = np.any(k != 0, axis=1)
    nz_eff = np.any(kef != 0, axis=1)
    zero = int(np.flatnonzero(~nz)[0])
    degenerate = nz & ~nz_eff
    keys = _ray_key(kef[nz_eff])
    rays, inv = np.unique(keys, axis=0, return_inverse=True)
    ray_index = np.full(grid.N, -1)
    ray_index[nz_eff] = inv.reshape(-1)
    strain, perp = _ray_bases(rays.astype(float))
    sb = SymbolBasis(grid, k, kef.astype(float), zero, degenerate, rays, ray_index, strain, perp)
    for a in (sb.k, sb.xi, sb.degenerate, sb.ray_index, sb.ray_strain, sb.ray_perp):
        a.setflags(write=False)
    _SYMBOL_CACHE[key] = sb
    return sb


def _check_means(grid, v, name):
    v = np.zeros(grid.m) if v is None else np.asarray(v, dtype=float).reshape(-1)
    if v.size != grid.m:
        raise ValueError(f"{name} must have {grid.m} coordinates")
    return v


def project_strain_hat(eh: np.ndarray, sb: SymbolBasis, eps0=None) -> np.ndarray:
    eps0 = _check_means(sb.grid, eps0, "eps0")
    out = sb.project_Yxi(eh)
    out[sb.zero] = math.sqrt(sb.grid.N) * eps0
    return out


def project_strain(eps: np.ndarray, sb: SymbolBasis, eps0=None) -> np.ndarray:
    """Closest strain field (node-mean L2) admitting a divergence-free potential, with mean ``eps0``."""
    g = sb.grid
    return g.unhat(project_strain_hat(g.hat(eps), sb, eps0))


def strain_residual(eps: np.ndarray, sb: SymbolBasis, eps0=None) -> float:
    """Node-mean L2 size of the part of ``eps`` violating the strain constraint."""
    g = sb.grid
    eh = g.hat(eps)
    return g.mean_l2(eh - project_strain_hat(eh, sb, eps0))


def velocity_hat_from_strain(eh: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    S = from_coords_stack(eh, sb.grid.d)
    uh = np.einsum("nij,nj->ni", S, sb.xi) * (sb.inv_xi2 / (np.pi * 1j))[:, None]
    uh[~sb.active] = 0.0
    return uh


def sym_grad_hat(uh: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    mats = 2j * np.pi * sym_product(uh, sb.xi.astype(complex))
    return to_coords_stack(mats)


def sym_grad(u: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    """Spectral symmetric gradient of a velocity field, as Y coordinates (trace part dropped)."""
    g = sb.grid
    return g.unhat(sym_grad_hat(g.hat(u), sb))


def divergence(u: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    g = sb.grid
    uh = g.hat(u)
    return g.unhat((2j * np.pi * np.sum(uh * sb.xi, axis=1))[:, None])[..., 0]


def recover_velocity(eps: np.ndarray, sb: SymbolBasis, eps0=None) -> np.ndarray:
    """Zero-mean divergence-free ``u`` with ``sym grad u = eps - eps0``.

    The mean ``eps0`` carries no periodic velocity.  Raises
    ``ConstraintResidualTooLarge`` when ``eps`` is not a compatible strain.
    """
    g = sb.grid
    eh = g.hat(eps)
    res = g.mean_l2(eh - project_strain_hat(eh, sb, eps0))
    if res > RESIDUAL_TOL * (1.0 + g.mean_l2(eh)):
        raise ConstraintResidualTooLarge(f"strain field violates compatibility (residual {res:.3e})")
    return g.unhat(velocity_hat_from_strain(eh, sb))


def force_hat(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Spectral form of a physical force field; rejects a nonzero mean."""
    fh = grid.hat(np.asarray(f, dtype=float))
    check_force(fh, grid)
    return fh


def check_force(fh: np.ndarray, grid: TorusGrid) -> None:
    scale = 1.0 + grid.mean_l2(fh)
    if np.linalg.norm(fh[0]) / math.sqrt(grid.N) > MEAN_FORCE_TOL * scale:
        raise NonzeroMeanForce("force has nonzero mean; no periodic stationary balance exists")
    sb = build_symbols(grid)
    if sb.degenerate.any() and grid.mean_l2(fh[sb.degenerate]) > MEAN_FORCE_TOL * scale:
        raise ValueError("force has content on Nyquist-only modes, which no stress can balance")


def particular_stress(fh: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    """Spectral stress in ``Y_xi`` balancing the transversal part of the force.

    Per mode ``sig = a (.) xi`` with ``a = i f_perp / (pi |xi|^2)``.
    """
    check_force(fh, sb.grid)
    xi = sb.xi
    fperp = fh - xi * (np.sum(fh * xi, axis=1) * sb.inv_xi2)[:, None]
    a = 1j * fperp * (sb.inv_xi2 / np.pi)[:, None]
    out = to_coords_stack(sym_product(a, xi.astype(complex)))
    out[~sb.active] = 0.0
    return out


def project_stress_hat(sh: np.ndarray, sb: SymbolBasis, part_hat: np.ndarray, sig0=None) -> np.ndarray:
    sig0 = _check_means(sb.grid, sig0, "sig0")
    out = part_hat + (sh - part_hat) - sb.project_Yxi(sh - part_hat)
    out[sb.zero] = math.sqrt(sb.grid.N) * sig0
    return out


def project_stress(sig: np.ndarray, sb: SymbolBasis, part_hat: np.ndarray, sig0=None) -> np.ndarray:
    """Closest stress field (node-mean L2) that balances the force for some pressure."""
    g = sb.grid
    return g.unhat(project_stress_hat(g.hat(sig), sb, part_hat, sig0))


def pressure_hat(sh: np.ndarray, fh: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    ph = sb.pressure_symbol(sh) + np.sum(fh * sb.xi, axis=1) * sb.inv_xi2 / (2j * np.pi)
    ph[~sb.active] = 0.0
    return ph


def momentum_residual_hat(sh, ph, fh, sb: SymbolBasis) -> np.ndarray:
    S = from_coords_stack(sh, sb.grid.d)
    r = -2j * np.pi * np.einsum("nij,nj->ni", S, sb.xi) + 2j * np.pi * sb.xi * ph[:, None] - fh
    r[sb.zero] = 0.0
    return r


def momentum_residual(sig, pi, fh, sb: SymbolBasis) -> float:
    """Node-mean L2 norm of ``-div sig + grad pi - f``."""
    g = sb.grid
    return g.mean_l2(momentum_residual_hat(g.hat(sig), g.hat(pi[..., None])[:, 0], fh, sb))


def pressure_from_stress(sig: np.ndarray, fh: np.ndarray, sb: SymbolBasis) -> np.ndarray:
    """Zero-mean pressure closing ``-div sig + grad pi = f``."""
    g = sb.grid
    sh = g.hat(sig)
    ph = pressure_hat(sh, fh, sb)
    res = g.mean_l2(momentum_residual_hat(sh, ph, fh, sb))
    if res > RESIDUAL_TOL * (1.0 + g.mean_l2(sh) + g.mean_l2(fh)):
        raise ConstraintResidualTooLarge(f"stress does not balance the force (residual {res:.3e})")
    return g.unhat(ph[:, None])[..., 0]


def dealias_mask(grid: TorusGrid) -> np.ndarray:
    """2/3-rule mask: keep modes with every ``|k_j| <= (n - 1) // 3``."""
    return np.all(np.abs(grid.modes()) <= (grid.n - 1) // 3, axis=1)


def convective_force(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Spectral ``div(u (x) u)``, pseudo-spectral with 2/3-rule dealiasing; zero mode removed."""
    sb = build_symbols(grid)
    keep = dealias_mask(grid)
    uh = grid.hat(u) * keep[:, None]
    uf = grid.unhat(uh)
    uu = uf[..., :, None] * uf[..., None, :]
    th = grid.hat(uu.reshape(grid.shape + (grid.d * grid.d,))).reshape(grid.N, grid.d, grid.d)
    out = 2j * np.pi * np.einsum("nij,nj->ni", th, sb.xi) * keep[:, None]
    out[sb.zero] = 0.0
    return out


@dataclass
class VelocityPressure:
    u: np.ndarray
    pi: np.ndarray


@dataclass
class Field:
    """Strain and stress coordinates on a torus grid with prescribed means."""

    grid: TorusGrid
    eps: np.ndarray
    sig: np.ndarray
    eps0: np.ndarray = None
    sig0: np.ndarray = None

    def __post_init__(self):
        g = self.grid
        shape = g.shape + (g.m,)
        self.eps = np.asarray(self.eps, dtype=float)
        self.sig = np.asarray(self.sig, dtype=float)
        if self.eps.shape != shape or self.sig.shape != shape:
            raise ValueError(f"field arrays must have shape {shape}")
        self.eps0 = _check_means(g, self.eps0, "eps0")
        self.sig0 = _check_means(g, self.sig0, "sig0")

    @classmethod
    def zeros(cls, grid: TorusGrid, eps0=None, sig0=None) -> "Field":
        z = np.zeros(grid.shape + (grid.m,))
        return cls(grid, z, z.copy(), eps0, sig0)

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        return self.eps.reshape(-1, self.grid.m), self.sig.reshape(-1, self.grid.m)

    def copy(self) -> "Field":
        return Field(self.grid, self.eps.copy(), self.sig.copy(), self.eps0.copy(), self.sig0.copy())


def _columns(grid: TorusGrid, arrays: dict) -> tuple[list, list]:
    names, cols = [], []
    for name, a in arrays.items():
        a = np.asarray(a, dtype=float).reshape(grid.N, -1)
        names.append((name, a.shape[1]))
        cols.append(a)
    return names, cols


def field_arrays(fld: Field, vp: VelocityPressure | None = None) -> dict:
    out = {"eps": fld.eps, "sig": fld.sig}
    if vp is not None:
        out["u"] = vp.u
        out["pi"] = vp.pi
    return out


def write_field_csv(path, grid: TorusGrid, arrays: dict, header_comment: str | None = None) -> None:
    """Node-major CSV: index columns, then every component of every array."""
    names, cols = _columns(grid, arrays)
    idx = np.stack(np.unravel_index(np.arange(grid.N), grid.shape), axis=1)
    head = [f"i{j}" for j in range(grid.d)]
    for name, c in names:
        head += [f"{name}{j}" for j in range(c)] if c > 1 else [name]
    data = np.concatenate(cols, axis=1)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(head)
        for i, row in zip(idx, data):
            w.writerow([str(v) for v in i] + [f"{v:.17g}" for v in row])


def write_field_binary(path, grid: TorusGrid, arrays: dict) -> None:
    """Little-endian float64 payload after a header of magic, d, n and the field list."""
    names, cols = _columns(grid, arrays)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<iii", grid.d, grid.n, len(names)))
        for name, c in names:
            b = name.encode()
            fh.write(struct.pack("<i", len(b)) + b + struct.pack("<i", c))
        fh.write(np.concatenate(cols, axis=1).astype("<f8").tobytes())


def read_field_binary(path) -> tuple[TorusGrid, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(BINARY_MAGIC)) != BINARY_MAGIC:
            raise ValueError(f"{path}: not a field file")
        d, n, nf = struct.unpack("<iii", fh.read(12))
        names = []
        for _ in range(nf):
            (ln,) = struct.unpack("<i", fh.read(4))
            name = fh.read(ln).decode()
            (c,) = struct.unpack("<i", fh.read(4))
            names.append((name, c))
        grid = TorusGrid(d, n)
        total = sum(c for _, c in names)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.N, total)
    out, at = {}, 0
    for name, c in names:
        block = data[:, at : at + c]
        out[name] = block.reshape(grid.shape + ((c,) if c > 1 else ())).astype(float)
        at += c
    return grid, out
