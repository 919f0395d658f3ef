"""Coordinates of Hilbert-space elements in the covariance eigenbasis.

A vector ``x = sum_j x_j phi_j`` is stored as a float64 array of its first
``n_store`` coordinates; mode ``j`` (1-based) lives at index ``j - 1`` and
every coordinate beyond ``n_store`` is implicitly zero.  All functions accept
a trailing mode axis, so batches of shape ``(..., n_store)`` work unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np


def spectral_vector(coords) -> np.ndarray:
    """Validate ``coords`` and return them as a read-only float64 array."""
    x = np.array(coords, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] < 1:
        raise ValueError("a spectral vector needs at least one stored mode")
    if not np.all(np.isfinite(x)):
        raise ValueError("spectral vector has non-finite coordinates")
    x.setflags(write=False)
    return x


def mode_indices(n: int) -> np.ndarray:
    """1-based mode numbers ``1..n`` as floats."""
    return np.arange(1, n + 1, dtype=np.float64)


@dataclass(frozen=True)
class PowerLaw:
    """Eigenvalue law ``lambda_j = amplitude * j**(-kappa)``.

    ``lambda_j`` is the square root of the j-th eigenvalue of C, i.e. the
    standard deviation of mode j under the reference Gaussian.
    """

    amplitude: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not self.kappa > 0.5:
            raise ValueError(
                f"kappa={self.kappa} must exceed 1/2 for C to be trace class"
            )

    def sqrt_eigenvalues(self, n: int) -> np.ndarray:
        return self.amplitude * mode_indices(n) ** (-self.kappa)

    @property
    def decay_bounds(self) -> tuple[float, float]:
        """Constants (M-, M+) with M- <= j**kappa * lambda_j <= M+."""
        return self.amplitude, self.amplitude

    def to_config(self) -> dict:
        return {"law": "power", "kappa": self.kappa, "amplitude": self.amplitude}


@dataclass(frozen=True)
class Explicit:
    """A finite, explicitly listed, nonincreasing sequence of ``lambda_j``."""

    lambdas: tuple[float, ...]

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("explicit law needs a non-empty list of lambdas")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("explicit lambdas must be finite and positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("explicit lambdas must be nonincreasing")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in lam))

    def sqrt_eigenvalues(self, n: int) -> np.ndarray:
        if n > len(self.lambdas):
            raise IndexError(
                f"explicit law defines {len(self.lambdas)} modes, {n} requested"
            )
        return np.asarray(self.lambdas[:n], dtype=np.float64)

    @property
    def kappa(self) -> float:
        # Only finitely many modes exist, so any decay rate is compatible.
        return math.inf

    def to_config(self) -> dict:
        return {"law": "explicit", "lambdas": list(self.lambdas)}


CovarianceSpec = Union[PowerLaw, Explicit]


def covariance_from_config(section: dict) -> CovarianceSpec:
    law = section.get("law", "power")
    if law in ("power", "powerlaw", "power_law"):
        return PowerLaw(
            amplitude=float(section.get("amplitude", 1.0)),
            kappa=float(section["kappa"]),
        )
    if law == "explicit":
        return Explicit(tuple(section["lambdas"]))
    raise ValueError(f"unknown covariance law {law!r}")


def eigenvalue(spec: CovarianceSpec, j: int) -> float:
    """Return ``lambda_j`` (1-based)."""
    if j < 1:
        raise IndexError(f"mode index starts at 1, got {j}")
    return float(spec.sqrt_eigenvalues(j)[-1])


def sobolev_norm(x, r: float) -> np.ndarray | float:
    """``(sum_j j**(2r) x_j**2) ** 0.5`` over the stored modes."""
    x = np.asarray(x, dtype=np.float64)
    w = mode_indices(x.shape[-1]) ** (2.0 * r)
    out = np.sqrt(np.sum(w * x * x, axis=-1))
    return float(out) if out.ndim == 0 else out


def apply_C_power(x, a: float, spec: CovarianceSpec) -> np.ndarray:
    """Apply ``C**a`` coordinate-wise: ``x_j * lambda_j**(2a)``."""
    x = np.asarray(x, dtype=np.float64)
    if a == 0:
        return x.copy()
    lam = spec.sqrt_eigenvalues(x.shape[-1])
    return x * lam ** (2.0 * a)


class TraceValue(NamedTuple):
    value: float
    tail_error: float


def trace_Cr(spec: CovarianceSpec, r: float, N: int | None = None,
             cutoff: int = 1_000_000) -> TraceValue:
    """Trace of ``C_r``, i.e. ``sum_j lambda_j**2 j**(2r)``.

    With ``N=None`` the full series is requested.  For a power law the sum
    is taken to ``cutoff`` and the remainder is bracketed by
    ``[int_{M+1}^inf, int_M^inf] t**(2r - 2 kappa) dt``; the midpoint is
    added to the value and the half-width reported as ``tail_error``.
    """
    if N is not None:
        if N < 1:
            raise ValueError("N must be positive")
        lam = spec.sqrt_eigenvalues(N)
        return TraceValue(float(np.sum(lam**2 * mode_indices(N) ** (2 * r))), 0.0)

    if isinstance(spec, Explicit):
        n = len(spec.lambdas)
        return trace_Cr(spec, r, n)

    p = 2 * spec.kappa - 2 * r
    if p <= 1:
        raise ValueError(
            f"trace of C_r diverges: 2*kappa - 2*r = {p:g} <= 1"
        )
    M = int(cutoff)
    j = mode_indices(M)
    # Summing smallest terms first keeps the rounding error far below the tail bound.
    head = float(np.sum((j ** (-p))[::-1]))
    amp2 = spec.amplitude**2
    upper = M ** (1 - p) / (p - 1)
    lower = (M + 1) ** (1 - p) / (p - 1)
    value = amp2 * (head + 0.5 * (upper + lower))
    err = amp2 * 0.5 * (upper - lower)
    # floating point floor of the head sum
    err += abs(value) * 8 * np.finfo(np.float64).eps * math.log2(M)
    return TraceValue(value, err)


def kl_sample(rng: np.random.Generator, spec: CovarianceSpec, N: int,
              size: int | tuple | None = None) -> np.ndarray:
    """Draw ``x_j = lambda_j * rho_j`` for ``j <= N`` with ``rho_j`` iid N(0, 1)."""
    if N < 1:
        raise ValueError("N must be positive")
    shape = (N,) if size is None else tuple(np.atleast_1d(size)) + (N,)
    return spec.sqrt_eigenvalues(N) * rng.standard_normal(shape)


def project(x, N: int) -> np.ndarray:
    """Keep modes ``1..N`` and zero the rest (the projection P^N)."""
    if N < 1:
        raise ValueError("N must be positive")
    out = np.array(x, dtype=np.float64)
    out[..., N:] = 0.0
    return out
