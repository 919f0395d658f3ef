"""Perturbation potentials Psi, with ``dpi/dpi0 ~ exp(-Psi)``.

Every potential is evaluated through its truncation ``Psi^N(x) = Psi(P^N x)``,
so only the first ``N`` coordinates of ``x`` are ever read.  Each kind also
knows its per-mode curvature, which gives the Taylor remainder in closed
form and the constant in ``|r| <= M * ||y - x||_s**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .spectral import CovarianceSpec, mode_indices


class UnsupportedPotential(ValueError):
    """Raised when an operation needs a conjugate (quadratic) potential."""


def _coefficients(values, n: int) -> np.ndarray:
    """Broadcast a scalar, or zero-pad a sequence, to ``n`` modes."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0:
        return np.full(n, float(v))
    out = np.zeros(n)
    m = min(n, v.size)
    out[:m] = v[:m]
    return out


def _freeze(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v) if v.ndim == 0 else tuple(float(t) for t in v)


@dataclass(frozen=True)
class Zero:
    kind: str = field(default="zero", init=False)

    def curvature(self, n: int) -> np.ndarray:
        return np.zeros(n)

    def value(self, x, N: int):
        x = np.asarray(x, dtype=np.float64)
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0

    def gradient(self, x, N: int) -> np.ndarray:
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def remainder(self, x, dx, N: int):
        return self.value(x, N)

    def to_config(self) -> dict:
        return {"kind": "zero"}


@dataclass(frozen=True)
class DiagonalQuadratic:
    """``Psi(x) = 0.5 * sum_j a_j x_j**2``.

    ``a`` is a nonnegative scalar (same for every mode) or a sequence;
    modes past the end of a sequence get ``a_j = 0``.
    """

    a: float | tuple[float, ...] = 1.0
    kind: str = field(default="diagonal_quadratic", init=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("diagonal quadratic coefficients must be finite and >= 0")
        object.__setattr__(self, "a", _freeze(a))

    def curvature(self, n: int) -> np.ndarray:
        return _coefficients(self.a, n)

    def value(self, x, N: int):
        x = np.asarray(x, dtype=np.float64)[..., :N]
        return 0.5 * np.sum(self.curvature(x.shape[-1]) * x * x, axis=-1)

    def gradient(self, x, N: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros_like(x)
        m = min(N, x.shape[-1])
        g[..., :m] = self.curvature(m) * x[..., :m]
        return g

    def remainder(self, x, dx, N: int):
        # exact second-order Taylor term; x drops out for a quadratic
        dx = np.asarray(dx, dtype=np.float64)[..., :N]
        return 0.5 * np.sum(self.curvature(dx.shape[-1]) * dx * dx, axis=-1)

    def to_config(self) -> dict:
        return {"kind": "diagonal_quadratic", "a": self.a if np.ndim(self.a) == 0 else list(self.a)}


@dataclass(frozen=True)
class SobolevSquared:
    """``Psi(x) = weight * ||x||_s**2``."""

    weight: float = 1.0
    s: float = 0.0
    kind: str = field(default="sobolev_squared", init=False)

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        if not self.s >= 0:
            raise ValueError("Sobolev exponent of the potential must be >= 0")

    def curvature(self, n: int) -> np.ndarray:
        return 2.0 * self.weight * mode_indices(n) ** (2.0 * self.s)

    def value(self, x, N: int):
        x = np.asarray(x, dtype=np.float64)[..., :N]
        return 0.5 * np.sum(self.curvature(x.shape[-1]) * x * x, axis=-1)

    def gradient(self, x, N: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros_like(x)
        m = min(N, x.shape[-1])
        g[..., :m] = self.curvature(m) * x[..., :m]
        return g

    def remainder(self, x, dx, N: int):
        dx = np.asarray(dx, dtype=np.float64)[..., :N]
        return 0.5 * np.sum(self.curvature(dx.shape[-1]) * dx * dx, axis=-1)

    def to_config(self) -> dict:
        return {"kind": "sobolev_squared", "weight": self.weight, "s": self.s}


@dataclass(frozen=True)
class CosineTilt:
    """``Psi(x) = sum_j w_j (1 - cos x_j)`` with nonnegative, summable ``w``."""

    w: tuple[float, ...] = (1.0,)
    kind: str = field(default="cosine_tilt", init=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=np.float64))
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("cosine tilt weights must be a finite, nonnegative sequence")
        object.__setattr__(self, "w", tuple(float(t) for t in w))

    def curvature(self, n: int) -> np.ndarray:
        # bound on |d^2 Psi / dx_j^2| = w_j |cos x_j|
        return _coefficients(self.w, n)

    def value(self, x, N: int):
        x = np.asarray(x, dtype=np.float64)[..., :N]
        w = self.curvature(x.shape[-1])
        return np.sum(w * 2.0 * np.sin(0.5 * x) ** 2, axis=-1)

    def gradient(self, x, N: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros_like(x)
        m = min(N, x.shape[-1])
        g[..., :m] = self.curvature(m) * np.sin(x[..., :m])
        return g

    def remainder(self, x, dx, N: int):
        # cos x - cos(x+d) - sin(x) d, rearranged to avoid cancellation
        x = np.asarray(x, dtype=np.float64)[..., :N]
        dx = np.asarray(dx, dtype=np.float64)[..., :N]
        w = self.curvature(x.shape[-1])
        terms = np.cos(x) * 2.0 * np.sin(0.5 * dx) ** 2 + np.sin(x) * (np.sin(dx) - dx)
        return np.sum(w * terms, axis=-1)

    def to_config(self) -> dict:
        return {"kind": "cosine_tilt", "w": list(self.w)}


PotentialSpec = Union[Zero, DiagonalQuadratic, SobolevSquared, CosineTilt]
CONJUGATE_KINDS = (Zero, DiagonalQuadratic, SobolevSquared)


def potential_from_config(section: dict) -> PotentialSpec:
    kind = section["kind"]
    if kind == "zero":
        return Zero()
    if kind == "diagonal_quadratic":
        return DiagonalQuadratic(section.get("a", 1.0))
    if kind == "sobolev_squared":
        return SobolevSquared(float(section.get("weight", 1.0)), float(section.get("s", 0.0)))
    if kind == "cosine_tilt":
        return CosineTilt(tuple(np.atleast_1d(section["w"])))
    raise ValueError(f"unknown potential kind {kind!r}")


def psi(p: PotentialSpec, x, N: int):
    """``Psi^N(x) = Psi(P^N x)``."""
    if N < 1:
        raise ValueError("N must be positive")
    return p.value(x, N)


def grad_psi(p: PotentialSpec, x, N: int) -> np.ndarray:
    """``P^N grad Psi(P^N x)``; coordinates beyond ``N`` are zero."""
    if N < 1:
        raise ValueError("N must be positive")
    return p.gradient(x, N)


def lower_bound(p: PotentialSpec) -> float:
    """Constant M1 with ``Psi >= M1`` everywhere (0 for every built-in)."""
    return 0.0


def remainder_constant(p: PotentialSpec, s: float, n: int) -> float:
    """Smallest M with ``|r(x, xi)| <= M ||y - x||_s**2`` over the first ``n`` modes."""
    return 0.5 * float(np.max(p.curvature(n) * mode_indices(n) ** (-2.0 * s)))


def exact_mode_variance(p: PotentialSpec, spec: CovarianceSpec, j: int, N: int) -> float:
    """Variance of coordinate ``j`` under the truncated target pi^N."""
    if j < 1:
        raise IndexError(f"mode index starts at 1, got {j}")
    return float(exact_mode_variances(p, spec, j, N)[-1])


def exact_mode_variances(p: PotentialSpec, spec: CovarianceSpec, n: int, N: int) -> np.ndarray:
    """Vectorised :func:`exact_mode_variance` for modes ``1..n``."""
    if not isinstance(p, CONJUGATE_KINDS):
        raise UnsupportedPotential(
            f"{p.kind} has no closed-form posterior; initialise by burn-in instead"
        )
    lam2 = spec.sqrt_eigenvalues(n) ** 2
    a = p.curvature(n)
    a[N:] = 0.0
    return lam2 / (1.0 + lam2 * a)

