"""Reference solvers that share no code path with the per-mode projections.

They are written directly in terms of the velocity and plain spectral
derivatives, so agreement with the data-driven machinery is a real check.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .phase import basis, sym_dim
from .spectral import TorusGrid


def _wave(grid: TorusGrid) -> np.ndarray:
    """Derivative wave vectors with Nyquist components zeroed, shape ``(N, d)``."""
    k = np.rint(np.fft.fftfreq(grid.n) * grid.n)
    k = np.where(np.abs(k) == grid.n // 2, 0.0, k)
    return np.stack(np.meshgrid(*([k] * grid.d), indexing="ij"), axis=-1).reshape(-1, grid.d)


def _fft(x, grid):
    c = x.shape[grid.d :]
    return np.fft.fftn(x, axes=tuple(range(grid.d)), norm="ortho").reshape((grid.N,) + c)


def _ifft(h, grid):
    c = h.shape[1:]
    return np.fft.ifftn(h.reshape(grid.shape + c), axes=tuple(range(grid.d)), norm="ortho").real


def leray(fh: np.ndarray, k: np.ndarray) -> np.ndarray:
    k2 = np.sum(k**2, axis=1)
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    out = fh - k * (np.sum(fh * k, axis=1) * inv)[:, None]
    out[k2 == 0] = 0.0
    return out


def stokes_velocity(force: np.ndarray, grid: TorusGrid, mu0: float = 0.5) -> np.ndarray:
    """Periodic Stokes flow ``-mu0 Lap u + grad pi = f`` with zero-mean, divergence-free ``u``."""
    k = _wave(grid)
    k2 = np.sum(k**2, axis=1)
    fh = leray(_fft(np.asarray(force, float), grid), k)
    inv = np.where(k2 > 0, 1.0 / (4 * np.pi**2 * mu0 * np.where(k2 > 0, k2, 1.0)), 0.0)
    return _ifft(fh * inv[:, None], grid)


def strain_matrix(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``sym grad u`` as full matrices, shape ``(n,)*d + (d, d)``."""
    k = _wave(grid)
    uh = _fft(u, grid)
    G = 2j * np.pi * uh[:, :, None] * k[:, None, :]
    S = 0.5 * (G + np.swapaxes(G, 1, 2))
    return _ifft(S.reshape(grid.N, -1), grid).reshape(grid.shape + (grid.d, grid.d))


def _div_matrix_field(S: np.ndarray, grid: TorusGrid) -> np.ndarray:
    k = _wave(grid)
    Sh = _fft(S.reshape(grid.shape + (-1,)), grid).reshape(grid.N, grid.d, grid.d)
    return _ifft(2j * np.pi * np.einsum("nij,nj->ni", Sh, k), grid)


def p_stokes_velocity(
    force: np.ndarray,
    grid: TorusGrid,
    mu0: float = 0.5,
    alpha: float = 2.0,
    u0: np.ndarray | None = None,
    gtol: float = 1e-12,
    maxiter: int = 20000,
) -> np.ndarray:
    """Power-law Stokes flow ``-div(2 mu0 |eps|^(alpha-1) eps) + grad pi = f``.

    Solved as the minimizer of ``mean[2 mu0 |eps(u)|^(alpha+1)/(alpha+1) - f.u]``
    over divergence-free, zero-mean periodic velocities (parameterized through
    the Leray projection), by L-BFGS.
    """
    d = grid.d
    k = _wave(grid)
    f = np.asarray(force, float)
    r = alpha + 1.0
    N = grid.N

    def proj(w):
        return _ifft(leray(_fft(w, grid), k), grid)

    def fun(w):
        u = proj(w.reshape(grid.shape + (d,)))
        S = strain_matrix(u, grid)
        nrm = np.sqrt(np.sum(S**2, axis=(-1, -2)))
        val = np.mean(2 * mu0 * nrm**r / r - np.sum(f * u, axis=-1))
        tau = 2 * mu0 * nrm[..., None, None] ** (alpha - 1.0) * S
        g = -_div_matrix_field(tau, grid) - f
        return val, proj(g).reshape(-1) / N

    w0 = np.zeros(N * d) if u0 is None else np.asarray(u0, float).reshape(-1)
    res = minimize(
        fun, w0, jac=True, method="L-BFGS-B",
        options={"maxiter": maxiter, "maxfun": 4 * maxiter, "ftol": 0.0, "gtol": gtol / N, "maxcor": 30},
    )
    return proj(res.x.reshape(grid.shape + (d,)))


def _derivative_matrices(grid: TorusGrid) -> list[np.ndarray]:
    """Dense real matrices of the spectral partial derivatives (Nyquist zeroed)."""
    k = _wave(grid)
    eye = np.eye(grid.N).reshape(grid.shape + (grid.N,))
    H = _fft(eye, grid)
    out = []
    for j in range(grid.d):
        out.append(_ifft(2j * np.pi * k[:, j : j + 1] * H, grid).reshape(grid.N, grid.N))
    return out


def _degenerate_patterns(grid: TorusGrid) -> np.ndarray:
    """Real node patterns of the modes on which no derivative acts (incl. the zero mode)."""
    idx = np.stack(np.unravel_index(np.arange(grid.N), grid.shape), axis=1)
    rows = []
    for mask in np.ndindex(*([2] * grid.d)):
        sel = np.array(mask, dtype=bool)
        rows.append((-1.0) ** np.sum(idx[:, sel], axis=1))
    return np.array(rows)


def kkt_projection(eps_t, sig_t, force, grid: TorusGrid, eps0=None, sig0=None) -> dict:
    """Equality-constrained least squares for the p = q = 2 constraint-set projection.

    Unknowns are nodal ``u, eps, sig, pi`` with the constraints written with
    dense derivative matrices; the objective is the summed squared distance
    of ``(eps, sig)`` to the targets.  Solved by the null-space method.
    """
    d, N = grid.d, grid.N
    m = sym_dim(d)
    B = basis(d)
    eps0 = np.zeros(m) if eps0 is None else np.asarray(eps0, float)
    sig0 = np.zeros(m) if sig0 is None else np.asarray(sig0, float)
    D = _derivative_matrices(grid)
    I = np.eye(N)
    nu, ne, ns, npi = N * d, N * m, N * m, N
    off_u, off_e, off_s, off_p = 0, nu, nu + ne, nu + ne + ns
    nvar = off_p + npi

    def u_col(i):
        return slice(off_u + i * N, off_u + (i + 1) * N)

    def e_col(c):
        return slice(off_e + c * N, off_e + (c + 1) * N)

    def s_col(c):
        return slice(off_s + c * N, off_s + (c + 1) * N)

    rows, rhs = [], []
    # eps_c = <B_c, sym grad u> + eps0_c
    for c in range(m):
        R = np.zeros((N, nvar))
        R[:, e_col(c)] = I
        for i in range(d):
            for j in range(d):
                R[:, u_col(i)] -= B[c, i, j] * D[j]
        rows.append(R)
        rhs.append(np.full(N, eps0[c]))
    # div u = 0
    R = np.zeros((N, nvar))
    for i in range(d):
        R[:, u_col(i)] = D[i]
    rows.append(R)
    rhs.append(np.zeros(N))
    # -div sig + grad pi = f, with sig_ij = sum_c B_cij s_c
    f = np.asarray(force, float).reshape(N, d)
    for i in range(d):
        R = np.zeros((N, nvar))
        for j in range(d):
            for c in range(m):
                R[:, s_col(c)] -= B[c, i, j] * D[j]
        R[:, off_p:] = D[i]
        rows.append(R)
        rhs.append(f[:, i])
    # gauges: u and pi vanish on derivative-free modes; mean stress fixed
    pats = _degenerate_patterns(grid)
    for pat in pats:
        for i in range(d):
            R = np.zeros((1, nvar))
            R[0, u_col(i)] = pat
            rows.append(R)
            rhs.append(np.zeros(1))
        R = np.zeros((1, nvar))
        R[0, off_p:] = pat
        rows.append(R)
        rhs.append(np.zeros(1))
    for c in range(m):
        R = np.zeros((1, nvar))
        R[0, s_col(c)] = 1.0 / N
        rows.append(R)
        rhs.append(np.array([sig0[c]]))
    C = np.vstack(rows)
    b = np.concatenate(rhs)
    zp = sla.lstsq(C, b)[0]
    Z = sla.null_space(C, rcond=1e-10)
    W = np.zeros((ne + ns, nvar))
    W[:, off_e:off_p] = np.eye(ne + ns)
    t = np.concatenate([
        np.asarray(eps_t, float).reshape(N, m).T.reshape(-1),
        np.asarray(sig_t, float).reshape(N, m).T.reshape(-1),
    ])
    y = sla.lstsq(W @ Z, t - W @ zp)[0]
    z = zp + Z @ y
    shape = grid.shape
    return {
        "u": z[off_u:off_e].reshape(d, N).T.reshape(shape + (d,)),
        "eps": z[off_e:off_s].reshape(m, N).T.reshape(shape + (m,)),
        "sig": z[off_s:off_p].reshape(m, N).T.reshape(shape + (m,)),
        "pi": z[off_p:].reshape(shape),
        "constraint_residual": float(np.linalg.norm(C @ z - b)),
    }


def brute_nearest(eps, sig, data_eps, data_sig, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear-scan nearest data point under ``(1/p)|de|^p + (1/q)|ds|^q``; lowest index on ties."""
    q = p / (p - 1.0)
    eps = np.atleast_2d(eps)
    sig = np.atleast_2d(sig)
    idx = np.empty(len(eps), dtype=np.intp)
    dist = np.empty(len(eps))
    for i, (e, s) in enumerate(zip(eps, sig)):
        dd = np.linalg.norm(data_eps - e, axis=1) ** p / p + np.linalg.norm(data_sig - s, axis=1) ** q / q
        j = int(np.argmin(dd))
        idx[i], dist[i] = j, dd[j]
    return idx, dist
