import numpy as np
from scipy.integrate import quad

from ddfluids.oracles import kkt_projection, p_stokes_velocity, stokes_velocity
from ddfluids.spectral import TorusGrid, build_symbols, divergence

from conftest import shear_force


def test_stokes_shear_closed_form():
    # -mu0 u'' = A sin(2 pi y)  =>  u = A sin(2 pi y) / (4 pi^2 mu0)
    g = TorusGrid(2, 16)
    A, mu0 = 1.3, 0.5
    u = stokes_velocity(shear_force(g, A), g, mu0)
    y = g.coordinates()[..., 1]
    assert np.allclose(u[..., 0], A * np.sin(2 * np.pi * y) / (4 * np.pi**2 * mu0), atol=1e-13)
    assert np.abs(u[..., 1]).max() < 1e-14


def test_stokes_removes_gradient_part():
    g = TorusGrid(2, 16)
    x = g.coordinates()[..., 0]
    f = np.stack([np.cos(2 * np.pi * x), np.zeros(g.shape)], axis=-1)
    assert np.abs(stokes_velocity(f, g)).max() < 1e-14


def _shear_ode_velocity(y, A, mu0, alpha):
    # sig_12 = A cos(2 pi y)/(2 pi) = mu0 2^{-(alpha-1)/2} |v'|^{alpha-1} v'
    def dv(t):
        s = A * np.cos(2 * np.pi * t) / (2 * np.pi)
        return np.sign(s) * (abs(s) * 2 ** ((alpha - 1) / 2) / mu0) ** (1 / alpha)

    kinks = [0.25, 0.75]
    v = np.array([quad(dv, 0.0, t, points=[k for k in kinks if k < t] or None, limit=200)[0] for t in y])
    # mean of v over the period, by parts: int_0^1 (1 - t) v'(t) dt
    mean = quad(lambda t: (1 - t) * dv(t), 0.0, 1.0, points=kinks, limit=200)[0]
    return v - mean


def test_p_stokes_matches_shear_ode():
    A, mu0, alpha = 2.0, 0.5, 2.0
    errs = []
    for n in (16, 32):
        g = TorusGrid(2, n)
        u = p_stokes_velocity(shear_force(g, A), g, mu0, alpha)
        v = _shear_ode_velocity(np.arange(n) / n, A, mu0, alpha)
        assert np.abs(u[..., 1]).max() < 1e-8
        assert np.allclose(u[..., 0], u[:1, :, 0], atol=1e-10)
        errs.append(np.linalg.norm(u[0, :, 0] - v) / np.linalg.norm(v))
    # the profile has kinks where the stress vanishes, so convergence is algebraic
    assert errs[0] < 1.5e-2
    assert errs[1] < errs[0] / 3


def test_p_stokes_reduces_to_stokes_at_alpha_one():
    g = TorusGrid(2, 8)
    rng = np.random.default_rng(3)
    x = g.coordinates()
    f = np.stack([np.sin(2 * np.pi * x[..., 1]) + rng.uniform(), np.cos(2 * np.pi * x[..., 0])], axis=-1)
    f -= f.reshape(-1, 2).mean(0)
    u1 = p_stokes_velocity(f, g, 0.5, 1.0)
    u2 = stokes_velocity(f, g, 0.5)
    assert np.allclose(u1, u2, atol=1e-8)


def test_kkt_projection_satisfies_constraints():
    g = TorusGrid(2, 4)
    rng = np.random.default_rng(0)
    et = rng.standard_normal(g.shape + (2,))
    st = rng.standard_normal(g.shape + (2,))
    x = g.coordinates()
    f = np.stack([np.sin(2 * np.pi * x[..., 1]), np.zeros(g.shape)], axis=-1)
    out = kkt_projection(et, st, f, g)
    assert out["constraint_residual"] < 1e-10
    assert np.abs(divergence(out["u"], build_symbols(g))).max() < 1e-10
