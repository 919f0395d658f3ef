"""The limiting diffusion ``dz = -h (z + C grad Psi(z)) dt + sqrt(2h) dW``.

``h(ell) = ell^2 beta(ell)`` with ``beta(ell) = 2 Phi(-ell / sqrt 2)``, the
limiting mean acceptance probability of the chain.  Phi is evaluated through
``erfc`` so that beta keeps full relative accuracy for large ell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfc, log_ndtr

from .potentials import PotentialSpec, UnsupportedPotential, CONJUGATE_KINDS
from .spectral import CovarianceSpec

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def std_normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def beta_of_ell(ell: float) -> float:
    """``2 Phi(-ell / sqrt 2)``, which equals ``erfc(ell / 2)``."""
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    return float(erfc(ell / 2.0))


def h_of_ell(ell: float) -> float:
    return ell**2 * beta_of_ell(ell)


@dataclass(frozen=True)
class ScalingConstants:
    ell: float
    beta: float
    h: float

    @classmethod
    def from_ell(cls, ell: float) -> "ScalingConstants":
        beta = beta_of_ell(ell)
        return cls(ell=float(ell), beta=beta, h=ell**2 * beta)


class NoInteriorMaximum(ValueError):
    pass


def optimal_ell(interval: tuple[float, float] = (0.1, 10.0), tol: float = 1e-10) -> ScalingConstants:
    """Maximise ``h(ell)`` over ``interval`` by golden-section search."""
    lo, hi = map(float, interval)
    if not 0 <= lo < hi:
        raise ValueError(f"bad search interval {interval}")
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    hc, hd = h_of_ell(c), h_of_ell(d)
    while b - a > tol:
        if hc > hd:
            b, d, hd = d, c, hc
            c = b - GOLDEN * (b - a)
            hc = h_of_ell(c)
        else:
            a, c, hc = c, d, hd
            d = a + GOLDEN * (b - a)
            hd = h_of_ell(d)
    ell = 0.5 * (a + b)
    edge = 10 * tol + 1e-9 * (hi - lo)
    if ell - lo < edge or hi - ell < edge:
        raise NoInteriorMaximum(f"h(ell) is monotone on [{lo}, {hi}]")
    return ScalingConstants.from_ell(ell)


def gaussian_tilt_moment(a: float, b: float) -> float:
    """``E[z (1 ^ exp(a z + b))]`` for standard normal z, in closed form.

    ``a exp(a^2/2 + b) Phi(-b/|a| - |a|)``, assembled in log space so large
    ``b`` does not overflow.
    """
    if a == 0:
        return 0.0
    aa = abs(a)
    log_mag = 0.5 * aa * aa + b + log_ndtr(-b / aa - aa)
    return math.copysign(math.exp(log_mag) * aa, a)


def z_ell_half_moment(ell: float) -> float:
    """``Phi(-ell/sqrt 2)``: both ``P(Z > 0)`` and ``E[e^Z 1{Z<0}]`` for ``Z ~ N(-ell^2, 2 ell^2)``."""
    if not ell > 0:
        raise ValueError("ell must be positive")
    return 0.5 * beta_of_ell(ell)


def default_dt(h: float) -> float:
    return min(1e-3, 0.05 / h) if h > 0 else 1e-3


def euler_step(z, p: PotentialSpec, spec: CovarianceSpec, sc: ScalingConstants,
               dt: float, rng: Optional[np.random.Generator], N: int,
               drift: bool = True, xi=None) -> np.ndarray:
    """One Euler-Maruyama step on every stored mode.

    The potential acts on the first ``N`` modes; the remaining stored modes
    follow the potential-free OU recursion.  ``xi`` may be supplied instead
    of drawing from ``rng``; ``drift=False`` keeps only the noise term.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[-1]
    lam = spec.sqrt_eigenvalues(n)
    if xi is None:
        xi = rng.standard_normal(z.shape)
    out = z + math.sqrt(2.0 * sc.h * dt) * lam * xi
    if drift:
        g = p.gradient(z, N)
        out = out - sc.h * dt * (z + lam**2 * g)
    return out


def ou_rates(p: PotentialSpec, spec: CovarianceSpec, sc: ScalingConstants, n: int, N: int):
    """Per-mode (theta_j, sigma_j^2) of the OU processes solving the SPDE."""
    if not isinstance(p, CONJUGATE_KINDS):
        raise UnsupportedPotential(f"{p.kind} does not give a linear SPDE")
    lam2 = spec.sqrt_eigenvalues(n) ** 2
    a = p.curvature(n)
    a[N:] = 0.0
    return sc.h * (1.0 + lam2 * a), lam2 / (1.0 + lam2 * a)


def exact_ou_transition(z0, lambda_j, a_j, sc: ScalingConstants, t: float,
                        rng: np.random.Generator):
    """Sample ``z_j(t)`` given ``z_j(0) = z0`` for the conjugate mode SDE

    ``dz = -h (1 + lambda^2 a) z dt + sqrt(2h) lambda dW``.

    Arguments broadcast, so whole blocks of modes can be advanced at once.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    z0 = np.asarray(z0, dtype=np.float64)
    lam2 = np.asarray(lambda_j, dtype=np.float64) ** 2
    a = np.asarray(a_j, dtype=np.float64)
    if np.any(a < 0):
        raise UnsupportedPotential("mode curvature must be nonnegative")
    theta = sc.h * (1.0 + lam2 * a)
    sigma2 = lam2 / (1.0 + lam2 * a)
    if t == 0:
        return z0.copy() if z0.ndim else float(z0)
    decay = np.exp(-theta * t)
    sd = np.sqrt(sigma2 * -np.expm1(-2.0 * theta * t))
    shape = np.broadcast(z0, theta).shape
    out = z0 * decay + sd * rng.standard_normal(shape)
    return out if np.ndim(out) else float(out)


def euler_path(z0, p: PotentialSpec, spec: CovarianceSpec, sc: ScalingConstants,
               T: float, dt: float, rng: np.random.Generator, N: int) -> np.ndarray:
    """Integrate to time ``T`` with fixed step ``dt`` (last step shortened)."""
    z = np.array(z0, dtype=np.float64)
    n_full = int(math.floor(T / dt + 1e-12))
    for _ in range(n_full):
        z = euler_step(z, p, spec, sc, dt, rng, N)
    rest = T - n_full * dt
    if rest > 1e-12 * max(T, 1.0):
        z = euler_step(z, p, spec, sc, rest, rng, N)
    return z
