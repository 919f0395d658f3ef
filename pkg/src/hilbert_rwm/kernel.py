"""Preconditioned random-walk Metropolis on truncated Gaussian-reference targets.

The proposal is ``y = x + sqrt(2 ell^2 / N) C^{1/2} xi`` on the first ``N``
modes; coordinates beyond ``N`` never move.  The log acceptance ratio is
computed from the decomposition

    Q = -sqrt(2 ell^2/N) <zeta, xi> - (ell^2/N) ||xi||^2 - r(x, xi)

which avoids subtracting two O(N) quadratic forms.  The four-term direct
form is kept as :func:`acceptance_exponent_direct` for cross-checking.

Randomness: each step consumes N normals from ``rng.noise`` followed by one
uniform from ``rng.accept``, whatever the outcome.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .potentials import PotentialSpec, exact_mode_variances, UnsupportedPotential
from .spectral import CovarianceSpec, kl_sample, mode_indices
from .streams import ChainRng

DEFAULT_CHUNK = 512


@dataclass(frozen=True)
class ProposalParams:
    ell: float
    N: int
    s: float = 0.0  # exponent used when reporting ||y - x||_s

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    @property
    def step_scale(self) -> float:
        """``sqrt(2 ell^2 / N)``."""
        return math.sqrt(2.0 * self.ell**2 / self.N)


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class AcceptanceDecomposition:
    linear: float
    quadratic: float
    remainder: float
    q: float
    zeta_norm_sq_over_N: float


@dataclass
class StepRecord:
    q: float
    accepted: bool
    proposal_norm_s: float
    xi: Optional[np.ndarray] = None


@dataclass
class ChainResult:
    final: ChainState
    n_accepted: int
    n_steps: int
    q: np.ndarray
    accepted: np.ndarray
    proposal_norm_s: np.ndarray
    snapshots: Optional[np.ndarray] = None
    snapshot_stride: int = 1

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_steps


@dataclass
class StationaryStart:
    state: ChainState
    approximate: bool = False
    burn_in_steps: int = 0


def zeta(x, p: PotentialSpec, spec: CovarianceSpec, N: int) -> np.ndarray:
    """``C^{-1/2} P^N x + C^{1/2} grad Psi^N(x)``, zero beyond mode N."""
    x = np.asarray(x, dtype=np.float64)
    lam = spec.sqrt_eigenvalues(N)
    out = np.zeros_like(x)
    xa = x[..., :N]
    out[..., :N] = xa / lam + lam * p.gradient(xa, N)
    return out


def propose(state: ChainState, params: ProposalParams, spec: CovarianceSpec,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``xi`` on the first N modes and return ``(y, xi)``."""
    N = params.N
    x = state.x
    xi = np.zeros_like(x)
    xi[:N] = rng.standard_normal(N)
    y = x.copy()
    y[:N] = x[:N] + params.step_scale * spec.sqrt_eigenvalues(N) * xi[:N]
    return y, xi


def acceptance_exponent_direct(x, y, p: PotentialSpec, spec: CovarianceSpec, N: int) -> float:
    """Log Metropolis ratio evaluated term by term (reference path)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lam = spec.sqrt_eigenvalues(N)
    wx = x[..., :N] / lam
    wy = y[..., :N] / lam
    return (0.5 * np.sum(wx * wx, axis=-1) - 0.5 * np.sum(wy * wy, axis=-1)
            + p.value(x, N) - p.value(y, N))


def _q_parts(xa, xi, lam, c, ell2_over_N, p, N):
    zeta_a = xa / lam + lam * p.gradient(xa, N)
    linear = -c * np.sum(zeta_a * xi, axis=-1)
    quadratic = -ell2_over_N * np.sum(xi * xi, axis=-1)
    dx = c * lam * xi
    remainder = p.remainder(xa, dx, N)
    return linear, quadratic, remainder, dx, zeta_a


def acceptance_exponent_stable(x, xi, p: PotentialSpec, spec: CovarianceSpec,
                               params: ProposalParams) -> AcceptanceDecomposition:
    N = params.N
    x = np.asarray(x, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    lam = spec.sqrt_eigenvalues(N)
    linear, quadratic, remainder, _, zeta_a = _q_parts(
        x[:N], xi[:N], lam, params.step_scale, params.ell**2 / N, p, N)
    return AcceptanceDecomposition(
        linear=float(linear),
        quadratic=float(quadratic),
        remainder=float(remainder),
        q=float(linear + quadratic - remainder),
        zeta_norm_sq_over_N=float(np.sum(zeta_a * zeta_a) / N),
    )


class _Transition:
    """Precomputed constants for repeated steps at fixed (params, p, spec)."""

    def __init__(self, params: ProposalParams, p: PotentialSpec, spec: CovarianceSpec):
        self.N = params.N
        self.p = p
        self.lam = spec.sqrt_eigenvalues(params.N)
        self.c = params.step_scale
        self.ell2_over_N = params.ell**2 / params.N
        self.weights_s = mode_indices(params.N) ** (2.0 * params.s)

    def __call__(self, x, xi, u):
        """Advance ``x`` in place; return (q, accepted, ||dx||_s)."""
        N = self.N
        xa = x[..., :N]
        linear, quadratic, remainder, dx, _ = _q_parts(
            xa, xi, self.lam, self.c, self.ell2_over_N, self.p, N)
        q = linear + quadratic - remainder
        # ties accept; log(0) = -inf always accepts
        with np.errstate(divide="ignore"):
            accepted = np.log(u) <= q
        if np.ndim(accepted):
            x[accepted, :N] = xa[accepted] + dx[accepted]
        elif accepted:
            x[:N] = xa + dx
        norm_s = np.sqrt(np.sum(self.weights_s * dx * dx, axis=-1))
        return q, accepted, norm_s


def step(state: ChainState, params: ProposalParams, p: PotentialSpec,
         spec: CovarianceSpec, rng: ChainRng, keep_xi: bool = False
         ) -> tuple[ChainState, StepRecord]:
    """One accept/reject step ``x^{k+1} = gamma y + (1 - gamma) x^k``."""
    xi = rng.noise.standard_normal(params.N)
    u = rng.accept.random()
    x = np.array(state.x, dtype=np.float64)
    q, accepted, norm_s = _Transition(params, p, spec)(x, xi, u)
    record = StepRecord(float(q), bool(accepted), float(norm_s),
                        xi.copy() if keep_xi else None)
    return ChainState(x, state.step_index + 1), record


def run_chain(init: ChainState, params: ProposalParams, p: PotentialSpec,
              spec: CovarianceSpec, n_steps: int, rng: ChainRng,
              recorder: Optional[Callable[[StepRecord], None]] = None,
              snapshot_stride: Optional[int] = None, keep_xi: bool = False,
              chunk: int = DEFAULT_CHUNK) -> ChainResult:
    """Apply :func:`step` ``n_steps`` times.

    Random numbers are drawn in blocks of ``chunk`` steps; the block draw
    yields exactly the same stream as per-step draws, so the trajectory
    matches a loop over :func:`step` bit for bit.

    With ``snapshot_stride=m`` the states ``x^0, x^m, x^{2m}, ...`` are kept.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    N = params.N
    move = _Transition(params, p, spec)
    x = np.array(init.x, dtype=np.float64)
    q = np.empty(n_steps)
    acc = np.empty(n_steps, dtype=bool)
    norms = np.empty(n_steps)
    snaps = [x.copy()] if snapshot_stride else None

    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        xis = rng.noise.standard_normal((m, N))
        us = rng.accept.random(m)
        for i in range(m):
            k = done + i
            q[k], acc[k], norms[k] = move(x, xis[i], us[i])
            if recorder is not None:
                recorder(StepRecord(float(q[k]), bool(acc[k]), float(norms[k]),
                                    xis[i].copy() if keep_xi else None))
            if snaps is not None and (k + 1) % snapshot_stride == 0:
                snaps.append(x.copy())
        done += m

    return ChainResult(
        final=ChainState(x, init.step_index + n_steps),
        n_accepted=int(acc.sum()),
        n_steps=n_steps,
        q=q,
        accepted=acc,
        proposal_norm_s=norms,
        snapshots=np.array(snaps) if snaps is not None else None,
        snapshot_stride=snapshot_stride or 1,
    )


@dataclass
class ReplicaResult:
    x: np.ndarray  # (R, n_store) final states
    n_accepted: np.ndarray  # (R,)
    n_steps: int
    q: Optional[np.ndarray] = None  # (R, n_steps) when requested


def run_replicas(x0, params: ProposalParams, p: PotentialSpec, spec: CovarianceSpec,
                 n_steps: int, rngs: list[ChainRng],
                 observer: Optional[Callable] = None, keep_q: bool = False,
                 threads: int = 1, chunk: int = 64) -> ReplicaResult:
    """Run independent chains, one row of ``x0`` per replica.

    Each replica draws only from its own :class:`ChainRng`, and all
    reductions are row-wise, so the result does not depend on ``threads``.
    ``observer(rows, x_prev, x_new, k)`` sees the active block (first N
    modes) of the replicas in ``rows`` around step ``k -> k+1``.
    """
    x = np.array(x0, dtype=np.float64)
    R = x.shape[0]
    if len(rngs) != R:
        raise ValueError("need one ChainRng per replica")
    move = _Transition(params, p, spec)
    N = params.N
    n_acc = np.zeros(R, dtype=np.int64)
    qs = np.empty((R, n_steps)) if keep_q else None

    def work(rows: slice):
        xr = x[rows]
        group = rngs[rows]
        done = 0
        while done < n_steps:
            m = min(chunk, n_steps - done)
            xis = np.stack([g.noise.standard_normal((m, N)) for g in group], axis=1)
            us = np.stack([g.accept.random(m) for g in group], axis=1)
            for i in range(m):
                prev = xr[:, :N].copy() if observer is not None else None
                q, accepted, _ = move(xr, xis[i], us[i])
                n_acc[rows] += accepted
                if qs is not None:
                    qs[rows, done + i] = q
                if observer is not None:
                    observer(rows, prev, xr[:, :N], done + i)
            done += m
        x[rows] = xr

    bounds = np.linspace(0, R, max(1, min(threads, R)) + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    if len(slices) == 1:
        work(slices[0])
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            list(pool.map(work, slices))
    return ReplicaResult(x=x, n_accepted=n_acc, n_steps=n_steps, q=qs)


def interpolant_eval(snapshots, t: float, N: int, stride: int = 1) -> np.ndarray:
    """Piecewise-linear interpolant ``z^N(t)`` on the time grid ``k / N``.

    ``snapshots[i]`` holds ``x^{i * stride}``.  With a stride above one only
    knot times that were stored can be evaluated.
    """
    snaps = np.asarray(snapshots, dtype=np.float64)
    K = snaps.shape[0]
    pos = t * N
    if t < 0 or pos > (K - 1) * stride * (1 + 1e-12):
        raise ValueError(f"t={t} outside stored range [0, {(K - 1) * stride / N}]")
    if stride > 1:
        idx = pos / stride
        k = int(round(idx))
        if abs(idx - k) > 1e-9:
            raise ValueError("t falls between stored snapshots (stride > 1)")
        return snaps[k].copy()
    k = min(int(math.floor(pos)), K - 1)
    frac = pos - k
    if frac == 0 or k == K - 1:
        return snaps[k].copy()
    return (1.0 - frac) * snaps[k] + frac * snaps[k + 1]


def default_burn_in(N: int) -> int:
    return 50 * N


def stationary_init(p: PotentialSpec, spec: CovarianceSpec, N: int, rng: ChainRng,
                    n_store: Optional[int] = None, fallback_burn_in: Optional[int] = None,
                    params: Optional[ProposalParams] = None) -> StationaryStart:
    """Start a chain from pi^N, exactly when the potential is quadratic.

    Otherwise a pi0 draw is pushed through ``fallback_burn_in`` RWM steps
    (default 50 N) and the start is flagged approximate.  Burn-in uses the
    chain's own ``noise``/``accept`` streams.
    """
    n_store = n_store or N
    try:
        var = exact_mode_variances(p, spec, n_store, N)
    except UnsupportedPotential:
        x0 = kl_sample(rng.init, spec, n_store)
        steps = default_burn_in(N) if fallback_burn_in is None else fallback_burn_in
        if params is None:
            from .spde import optimal_ell
            params = ProposalParams(optimal_ell().ell, N)
        res = run_chain(ChainState(x0), params, p, spec, steps, rng) if steps else None
        x = res.final.x if res else x0
        return StationaryStart(ChainState(x, 0), approximate=True, burn_in_steps=steps)
    x0 = np.sqrt(var) * rng.init.standard_normal(n_store)
    return StationaryStart(ChainState(x0, 0))


def stationary_batch(p: PotentialSpec, spec: CovarianceSpec, N: int, rngs: list[ChainRng],
                     n_store: Optional[int] = None, fallback_burn_in: Optional[int] = None,
                     params: Optional[ProposalParams] = None) -> tuple[np.ndarray, list[StationaryStart]]:
    starts = [stationary_init(p, spec, N, g, n_store, fallback_burn_in, params) for g in rngs]
    return np.stack([s.state.x for s in starts]), starts
