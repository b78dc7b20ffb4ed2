"""Radially symmetric viscosity laws ``sig = 2 mu(|eps|) eps``.

Each law is described by its scalar stress map ``tau(s) = 2 mu(s) s`` for
``s = |eps|``; the stress is ``tau(|eps|) eps / |eps|``.  Laws with a yield
stress (``tau(0+) > 0``) carry the segment ``{(0, sig): |sig| <= tau(0+)}``
in their data set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MONOTONE_GRID = 1000


@dataclass(frozen=True)
class ConstitutiveLaw:
    dim: int = field(default=2, kw_only=True)

    kind = "abstract"

    def stress_magnitude(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def viscosity(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.stress_magnitude(s) / (2.0 * s)

    @property
    def yield_stress(self) -> float:
        """``lim_{s -> 0} 2 mu(s) s``."""
        return float(self.stress_magnitude(np.array([0.0]))[0])

    def stress(self, eps: np.ndarray) -> np.ndarray:
        """Stress coordinates for stacked strain coordinates; ``eps = 0`` maps to 0."""
        eps = np.asarray(eps, dtype=float)
        s = np.linalg.norm(eps, axis=-1, keepdims=True)
        tau = self.stress_magnitude(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s > 0, tau / np.where(s > 0, s, 1.0), 0.0) * eps

    def is_monotone(self, s_max: float = 10.0, n: int = MONOTONE_GRID) -> bool:
        """Whether ``s -> tau(s)`` is nondecreasing on a grid of ``n`` points in ``[0, s_max]``."""
        s = np.linspace(0.0, s_max, n)
        tau = self.stress_magnitude(s)
        return bool(np.all(np.diff(tau) >= -1e-12 * (1.0 + np.abs(tau[1:]))))

    def params(self) -> dict:
        out = {"kind": self.kind}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def _check_dim(d) -> None:
    if d not in (2, 3):
        raise ValueError(f"spatial dimension must be 2 or 3, got {d}")


def _check_positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"law parameter {k} must be > 0, got {v}")


@dataclass(frozen=True)
class Newtonian(ConstitutiveLaw):
    mu0: float = 0.5
    kind = "newtonian"

    def __post_init__(self):
        _check_dim(self.dim)
        _check_positive(mu0=self.mu0)

    def stress_magnitude(self, s):
        return 2.0 * self.mu0 * np.asarray(s, dtype=float)


@dataclass(frozen=True)
class PowerLaw(ConstitutiveLaw):
    """``mu(s) = mu0 s^(alpha-1)``; shear-thinning for alpha < 1."""

    mu0: float = 0.5
    alpha: float = 1.0
    kind = "power_law"

    def __post_init__(self):
        _check_dim(self.dim)
        _check_positive(mu0=self.mu0, alpha=self.alpha)

    def stress_magnitude(self, s):
        return 2.0 * self.mu0 * np.asarray(s, dtype=float) ** self.alpha


@dataclass(frozen=True)
class Ellis(ConstitutiveLaw):
    """``mu(s) = mu0 / (1 + (s/s_half)^(beta-1))``."""

    mu0: float = 0.5
    s_half: float = 1.0
    beta: float = 1.5
    kind = "ellis"

    def __post_init__(self):
        _check_dim(self.dim)
        _check_positive(mu0=self.mu0, s_half=self.s_half, beta=self.beta)

    def stress_magnitude(self, s):
        s = np.asarray(s, dtype=float)
        safe = np.where(s > 0, s, 1.0)
        tau = 2.0 * self.mu0 * safe / (1.0 + (safe / self.s_half) ** (self.beta - 1.0))
        return np.where(s > 0, tau, 0.0)


@dataclass(frozen=True)
class HerschelBulkley(ConstitutiveLaw):
    """``tau(s) = a + 2 mu0 s^alpha`` for s > 0, with yield stress ``a``."""

    a: float = 1.0
    mu0: float = 0.5
    alpha: float = 1.0
    kind = "herschel_bulkley"

    def __post_init__(self):
        _check_dim(self.dim)
        if self.a < 0:
            raise ValueError(f"yield stress a must be >= 0, got {self.a}")
        _check_positive(mu0=self.mu0, alpha=self.alpha)

    def stress_magnitude(self, s):
        return self.a + 2.0 * self.mu0 * np.asarray(s, dtype=float) ** self.alpha


@dataclass(frozen=True)
class TabulatedRadial(ConstitutiveLaw):
    """Piecewise-linear ``tau`` through samples ``(s_i, tau_i)``.

    Constant below the first sample, linear extrapolation with the last slope
    above the final one.
    """

    s: tuple = field(default=(0.0, 1.0))
    tau: tuple = field(default=(0.0, 1.0))
    kind = "tabulated"

    def __post_init__(self):
        _check_dim(self.dim)
        s = tuple(float(v) for v in self.s)
        tau = tuple(float(v) for v in self.tau)
        if len(s) != len(tau) or len(s) < 2:
            raise ValueError("tabulated law needs at least two (s, tau) samples of equal length")
        if np.any(np.diff(s) <= 0) or s[0] < 0:
            raise ValueError("tabulated strain magnitudes must be nonnegative and strictly increasing")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "tau", tau)

    def stress_magnitude(self, x):
        x = np.asarray(x, dtype=float)
        s, tau = np.array(self.s), np.array(self.tau)
        slope = (tau[-1] - tau[-2]) / (s[-1] - s[-2])
        return np.where(x <= s[-1], np.interp(x, s, tau), tau[-1] + slope * (x - s[-1]))


LAW_KINDS = {
    "newtonian": Newtonian,
    "power_law": PowerLaw,
    "ellis": Ellis,
    "herschel_bulkley": HerschelBulkley,
    "tabulated": TabulatedRadial,
}


def law_from_dict(spec: dict, dim: int = 2) -> ConstitutiveLaw:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in LAW_KINDS:
        raise ValueError(f"unknown law kind {kind!r}; expected one of {sorted(LAW_KINDS)}")
    spec.setdefault("dim", dim)
    if kind == "tabulated":
        spec["s"] = tuple(spec["s"])
        spec["tau"] = tuple(spec["tau"])
    return LAW_KINDS[kind](**spec)
