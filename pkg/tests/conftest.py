import numpy as np
import pytest

from ddfluids.config import force_from_dict
from ddfluids.spectral import TorusGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def shear_force(grid: TorusGrid, amp: float = 1.0) -> np.ndarray:
    return force_from_dict({"kind": "shear", "amp": amp}, grid)


def manufactured_force(grid: TorusGrid) -> np.ndarray:
    """Zero-mean, mixed-mode force with both transversal and longitudinal content."""
    x = grid.coordinates()
    tp = 2 * np.pi
    f = np.zeros(grid.shape + (grid.d,))
    f[..., 0] = np.sin(tp * x[..., 1]) + 0.5 * np.cos(tp * (x[..., 0] + x[..., 1]))
    f[..., 1] = np.cos(2 * tp * x[..., 0])
    if grid.d == 3:
        f[..., 2] = 0.3 * np.sin(tp * x[..., 0])
    return f


def random_force(grid: TorusGrid, rng, kmax: int = 2) -> np.ndarray:
    """Random smooth zero-mean force built from a few low modes."""
    x = grid.coordinates()
    f = np.zeros(grid.shape + (grid.d,))
    for _ in range(4):
        k = rng.integers(-kmax, kmax + 1, grid.d)
        if not k.any():
            k[0] = 1
        amp = rng.standard_normal(grid.d)
        arg = 2 * np.pi * (x @ k) + rng.uniform(0, 2 * np.pi)
        f += np.cos(arg)[..., None] * amp
    return f
