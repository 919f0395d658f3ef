"""Monte Carlo checks of the chain's diffusion limit.

One-step drift/diffusion estimators, concentration of ``||zeta||^2 / N``,
Gaussianity of Q, 1-D KS / Wasserstein distances, the noise process W^N,
and two-sample comparisons of chain and SPDE path functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from .kernel import (ProposalParams, _q_parts, run_replicas, stationary_batch, zeta)
from .potentials import PotentialSpec, exact_mode_variances
from .spectral import CovarianceSpec, mode_indices
from .spde import ScalingConstants, beta_of_ell, exact_ou_transition, std_normal_cdf
from .streams import replica_rngs, stream

KOLMOGOROV_99 = 1.628  # 99% quantile of the Kolmogorov distribution, times 1/sqrt(n)
DEFAULT_PROBE_MODES = (1, 2, 3, 5, 10)
DEFAULT_PROBE_PAIRS = ((1, 2), (1, 5))


# --------------------------------------------------------------------------
# one-step drift and diffusion
# --------------------------------------------------------------------------

@dataclass
class DriftDiffusionReport:
    N: int
    x_probe: np.ndarray
    n_inner: int
    method: str
    drift_est: Optional[np.ndarray] = None
    drift_theory: Optional[np.ndarray] = None
    drift_se: Optional[np.ndarray] = None
    r_N_norm_s: float = math.nan
    relative_residual: float = math.nan
    probe_modes: tuple = ()
    diffusion_diag_est: Optional[np.ndarray] = None
    diffusion_diag_theory: Optional[np.ndarray] = None
    diffusion_diag_se: Optional[np.ndarray] = None
    probe_pairs: tuple = ()
    diffusion_offdiag_est: Optional[np.ndarray] = None
    diffusion_offdiag_se: Optional[np.ndarray] = None
    E_N_entries: Optional[np.ndarray] = None
    mean_acceptance: float = math.nan

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            out[k] = v
        out.pop("x_probe")
        return out


def drift_theory(x, params: ProposalParams, p: PotentialSpec, spec: CovarianceSpec) -> np.ndarray:
    """``-ell^2 beta (P^N x + C^N grad Psi^N(x))`` on the first N modes."""
    N = params.N
    xa = np.asarray(x, dtype=np.float64)[:N]
    lam = spec.sqrt_eigenvalues(N)
    m = xa + lam**2 * p.gradient(xa, N)
    return -params.ell**2 * beta_of_ell(params.ell) * m


def estimate_one_step(x, params: ProposalParams, p: PotentialSpec, spec: CovarianceSpec,
                      n_inner: int, rng: np.random.Generator,
                      probe_modes: Sequence[int] = DEFAULT_PROBE_MODES,
                      probe_pairs: Sequence[tuple[int, int]] = DEFAULT_PROBE_PAIRS,
                      method: str = "antithetic", chunk: int = 4096) -> DriftDiffusionReport:
    """Estimate ``N E_0(x^1 - x)`` and probe entries of ``N E_0[(x^1-x) (x) (x^1-x)]``.

    ``method="plain"`` averages over (xi, u) pairs literally.
    ``method="antithetic"`` replaces the Bernoulli accept indicator by its
    conditional mean ``1 ^ e^Q`` and pairs every xi with its reflection
    through the zeta direction, which keeps ``<zeta, xi>`` and ``||xi||``.
    Both are unbiased; the second removes the O(sqrt N) noise carried by the
    directions orthogonal to zeta.
    """
    if method not in ("plain", "antithetic"):
        raise ValueError(f"unknown method {method!r}")
    N = params.N
    x = np.asarray(x, dtype=np.float64)
    xa = x[:N]
    lam = spec.sqrt_eigenvalues(N)
    c = params.step_scale
    ell2N = params.ell**2 / N
    beta = beta_of_ell(params.ell)

    modes = np.array([j for j in probe_modes if j <= N], dtype=int)
    pairs = np.array([(i, j) for i, j in probe_pairs if i <= N and j <= N], dtype=int).reshape(-1, 2)

    zeta_a = zeta(xa, p, spec, N)
    zhat = zeta_a / max(np.linalg.norm(zeta_a), np.finfo(float).tiny)

    sum_d = np.zeros(N)
    sq_d = np.zeros(N)
    sum_dg = np.zeros(modes.size)
    sq_dg = np.zeros(modes.size)
    sum_od = np.zeros(len(pairs))
    sq_od = np.zeros(len(pairs))
    sum_alpha = 0.0

    def weights(xi):
        lin, quad, rem, _, _ = _q_parts(xa, xi, lam, c, ell2N, p, N)
        return lin + quad - rem

    done = 0
    while done < n_inner:
        m = min(chunk, n_inner - done)
        xi = rng.standard_normal((m, N))
        if method == "plain":
            q = weights(xi)
            u = rng.random(m)
            with np.errstate(divide="ignore"):
                gam = (np.log(u) <= q).astype(float)
            variants = [(xi, gam)]
        else:
            proj = xi @ zhat
            xr = 2.0 * proj[:, None] * zhat - xi
            variants = [(xi, np.minimum(1.0, np.exp(np.minimum(weights(xi), 0.0)))),
                        (xr, np.minimum(1.0, np.exp(np.minimum(weights(xr), 0.0))))]
        k = len(variants)
        d = sum(g[:, None] * v for v, g in variants) / k  # per-sample E_u[gamma] xi
        # per-sample N (x^1 - x) = N c lam gamma xi
        drift_s = N * c * lam * d
        sum_d += drift_s.sum(0)
        sq_d += (drift_s**2).sum(0)
        if modes.size:
            cols = modes - 1
            dg = sum(g[:, None] * v[:, cols] ** 2 for v, g in variants) / k
            dg = N * c**2 * lam[cols] ** 2 * dg
            sum_dg += dg.sum(0)
            sq_dg += (dg**2).sum(0)
        if len(pairs):
            i, j = pairs[:, 0] - 1, pairs[:, 1] - 1
            od = sum(g[:, None] * v[:, i] * v[:, j] for v, g in variants) / k
            od = N * c**2 * lam[i] * lam[j] * od
            sum_od += od.sum(0)
            sq_od += (od**2).sum(0)
        sum_alpha += float(sum(g.sum() for _, g in variants)) / k
        done += m

    def mean_se(s, sq):
        mean = s / n_inner
        var = np.maximum(sq / n_inner - mean**2, 0.0)
        return mean, np.sqrt(var / max(n_inner - 1, 1))

    est, se = mean_se(sum_d, sq_d)
    theory = drift_theory(x, params, p, spec)
    w = mode_indices(N) ** (2.0 * params.s)
    resid = float(np.sqrt(np.sum(w * (est - theory) ** 2)))
    tnorm = float(np.sqrt(np.sum(w * theory**2)))

    dg_est, dg_se = mean_se(sum_dg, sq_dg)
    od_est, od_se = mean_se(sum_od, sq_od)
    dg_theory = 2.0 * params.ell**2 * beta * lam[modes - 1] ** 2 if modes.size else np.zeros(0)
    return DriftDiffusionReport(
        N=N, x_probe=x.copy(), n_inner=n_inner, method=method,
        drift_est=est, drift_theory=theory, drift_se=se,
        r_N_norm_s=resid, relative_residual=resid / tnorm if tnorm > 0 else math.inf,
        probe_modes=tuple(int(j) for j in modes),
        diffusion_diag_est=dg_est, diffusion_diag_theory=dg_theory, diffusion_diag_se=dg_se,
        probe_pairs=tuple(tuple(int(v) for v in pr) for pr in pairs),
        diffusion_offdiag_est=od_est, diffusion_offdiag_se=od_se,
        E_N_entries=np.concatenate([dg_est - dg_theory, od_est]),
        mean_acceptance=sum_alpha / n_inner,
    )


def estimate_one_step_drift(x, params, p, spec, n_inner, rng, method="antithetic"):
    return estimate_one_step(x, params, p, spec, n_inner, rng, probe_modes=(),
                             probe_pairs=(), method=method)


def estimate_one_step_diffusion(x, params, p, spec, n_inner, probe_modes, rng,
                                probe_pairs=DEFAULT_PROBE_PAIRS, method="antithetic"):
    return estimate_one_step(x, params, p, spec, n_inner, rng, probe_modes=probe_modes,
                             probe_pairs=probe_pairs, method=method)


# --------------------------------------------------------------------------
# zeta and Q
# --------------------------------------------------------------------------

def zeta_statistic(x, p: PotentialSpec, spec: CovarianceSpec, N: int):
    """``||zeta(x)||^2 / N``; accepts a batch of vectors."""
    z = zeta(x, p, spec, N)
    return np.sum(z * z, axis=-1) / N


@dataclass
class QMomentReport:
    n: int
    ell: float
    mean: float
    var: float
    mean_target: float
    var_target: float
    se_mean: float
    ks: float

    def to_dict(self) -> dict:
        return asdict(self)


def q_moment_test(q_samples, ell: float) -> QMomentReport:
    """Compare Q samples with the limit law N(-ell^2, 2 ell^2)."""
    q = np.asarray(q_samples, dtype=np.float64).ravel()
    if q.size < 100:
        raise ValueError(f"need at least 100 Q samples, got {q.size}")
    mu, sd = -ell**2, math.sqrt(2.0) * ell
    ks = empirical_ks(q, lambda t: std_normal_cdf((t - mu) / sd))
    return QMomentReport(
        n=int(q.size), ell=float(ell), mean=float(q.mean()), var=float(q.var(ddof=1)),
        mean_target=mu, var_target=2.0 * ell**2,
        se_mean=float(q.std(ddof=1) / math.sqrt(q.size)), ks=float(ks),
    )


def stationary_q_samples(p: PotentialSpec, spec: CovarianceSpec, params: ProposalParams,
                         n: int, rng: np.random.Generator, chunk: int = 8192) -> np.ndarray:
    """Q at independent (x ~ pi^N, xi) pairs; needs a conjugate potential."""
    N = params.N
    sd = np.sqrt(exact_mode_variances(p, spec, N, N))
    lam = spec.sqrt_eigenvalues(N)
    out = np.empty(n)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x = sd * rng.standard_normal((m, N))
        xi = rng.standard_normal((m, N))
        lin, quad, rem, _, _ = _q_parts(x, xi, lam, params.step_scale, params.ell**2 / N, p, N)
        out[done:done + m] = lin + quad - rem
        done += m
    return out


# --------------------------------------------------------------------------
# 1-D distances
# --------------------------------------------------------------------------

def _clean(samples, name):
    a = np.asarray(samples, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    return a


def empirical_ks(samples_a, samples_b_or_cdf) -> float:
    """Kolmogorov-Smirnov distance; exact sup over the merged sample grid.

    The second argument is either another sample or a CDF callable.
    """
    a = np.sort(_clean(samples_a, "samples_a"))
    if callable(samples_b_or_cdf):
        F = np.asarray(samples_b_or_cdf(a), dtype=np.float64)
        n = a.size
        upper = np.arange(1, n + 1) / n - F
        lower = F - np.arange(0, n) / n
        return float(max(upper.max(), lower.max(), 0.0))
    b = np.sort(_clean(samples_b_or_cdf, "samples_b"))
    grid = np.concatenate([a, b])
    Fa = np.searchsorted(a, grid, side="right") / a.size
    Fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(Fa - Fb)))


def empirical_wasserstein1(samples_a, samples_b) -> float:
    """1-D Wasserstein-1 distance between two empirical measures.

    Equal sizes: mean absolute difference of order statistics.  Unequal
    sizes: the exact integral of ``|F_a - F_b|`` (no trimming needed).
    """
    a = np.sort(_clean(samples_a, "samples_a"))
    b = np.sort(_clean(samples_b, "samples_b"))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.concatenate([a, b])
    grid.sort()
    Fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    Fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(Fa - Fb) * np.diff(grid)))


@dataclass
class DistanceReport:
    ks: float
    wasserstein1: float
    n_a: int
    n_b: int
    density_bound: float
    slack: float
    bound: float
    bound_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def ks_wass_bound_check(samples, reference, density_bound: float,
                        slack: Optional[float] = None) -> DistanceReport:
    """Check ``KS <= sqrt(4 M W1) + slack`` between two samples.

    ``reference`` is a sample from the law whose density is bounded by
    ``density_bound``.  The default slack ``2 * 1.63 / sqrt(n)`` absorbs the
    sampling error of the empirical KS.
    """
    a = _clean(samples, "samples")
    b = _clean(reference, "reference")
    if slack is None:
        slack = 2.0 * KOLMOGOROV_99 / math.sqrt(a.size)
    ks = empirical_ks(a, b)
    w1 = empirical_wasserstein1(a, b)
    bound = math.sqrt(4.0 * density_bound * w1)
    return DistanceReport(ks=ks, wasserstein1=w1, n_a=int(a.size), n_b=int(b.size),
                          density_bound=float(density_bound), slack=float(slack),
                          bound=bound, bound_ok=bool(ks <= bound + slack))


def q_limit_density_bound(ell: float) -> float:
    """Maximum density of N(-ell^2, 2 ell^2), i.e. ``1 / sqrt(4 pi ell^2)``."""
    return 1.0 / math.sqrt(4.0 * math.pi * ell**2)


def kolmogorov_band(n: int, m: Optional[int] = None) -> float:
    """99% band for the one-sample (or two-sample) KS statistic."""
    if m is None:
        return KOLMOGOROV_99 / math.sqrt(n)
    return KOLMOGOROV_99 * math.sqrt((n + m) / (n * m))


# --------------------------------------------------------------------------
# noise process W^N
# --------------------------------------------------------------------------

class NoiseAccumulator:
    """Accumulate ``W^N(T)`` step by step along stationary chains.

    ``Gamma^{k+1}`` uses the limiting conditional mean ``-(ell^2 beta/N) m^N(x^k)``
    in place of ``E_k(x^{k+1} - x^k)`` (``conditional_mean="limit"``), or an
    inner Monte Carlo estimate of it (``"inner_mc"``, small N only).
    """

    def __init__(self, params: ProposalParams, p: PotentialSpec, spec: CovarianceSpec,
                 T: float, replicas: int, conditional_mean: str = "limit",
                 n_inner: int = 2000, rng: Optional[np.random.Generator] = None):
        if conditional_mean not in ("limit", "inner_mc"):
            raise ValueError(f"unknown conditional_mean {conditional_mean!r}")
        if conditional_mean == "inner_mc" and rng is None:
            raise ValueError("inner_mc needs an rng")
        self.params, self.p, self.spec, self.T = params, p, spec, T
        N = params.N
        self.beta = beta_of_ell(params.ell)
        self.lam2 = spec.sqrt_eigenvalues(N) ** 2
        self.full_steps = int(math.floor(N * T + 1e-9))
        self.frac = N * T - self.full_steps
        if self.frac < 1e-9:
            self.frac = 0.0
        self.steps_needed = self.full_steps + (1 if self.frac else 0)
        self.norm = 1.0 / math.sqrt(2.0 * params.ell**2 * self.beta)
        self.acc = np.zeros((replicas, N))
        self.mode = conditional_mean
        self.n_inner = n_inner
        self.rng = rng

    def expected_increment(self, x_prev):
        N = self.params.N
        if self.mode == "limit":
            g = self.p.gradient(x_prev, N)
            return -(self.params.ell**2 * self.beta / N) * (x_prev + self.lam2 * g)
        out = np.empty_like(x_prev)
        for r in range(x_prev.shape[0]):
            rep = estimate_one_step(x_prev[r], self.params, self.p, self.spec, self.n_inner,
                                    self.rng, probe_modes=(), probe_pairs=())
            out[r] = rep.drift_est / N
        return out

    def __call__(self, rows, x_prev, x_new, k):
        if k >= self.steps_needed:
            return
        weight = 1.0 if k < self.full_steps else self.frac
        self.acc[rows] += weight * self.norm * (x_new - x_prev - self.expected_increment(x_prev))

    @property
    def W(self) -> np.ndarray:
        return self.acc


@dataclass
class NoiseReport:
    N: int
    T: float
    replicas: int
    probe_modes: tuple
    ks: list
    var_ratio: list
    pairs: tuple
    correlation: list
    correlation_se: float
    W: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("W")
        return d


def noise_report(W, params: ProposalParams, spec: CovarianceSpec, T: float,
                 probe_modes=DEFAULT_PROBE_MODES, probe_pairs=DEFAULT_PROBE_PAIRS) -> NoiseReport:
    """Per-mode KS of ``W_j / (sqrt(T) lambda_j)`` to N(0,1), variance ratios, correlations."""
    W = np.asarray(W, dtype=np.float64)
    R, N = W.shape
    lam = spec.sqrt_eigenvalues(N)
    modes = tuple(j for j in probe_modes if j <= N)
    ks, ratio = [], []
    for j in modes:
        v = W[:, j - 1] / (math.sqrt(T) * lam[j - 1])
        ks.append(empirical_ks(v, std_normal_cdf))
        ratio.append(float(np.var(v, ddof=1)))
    pairs = tuple((i, j) for i, j in probe_pairs if i <= N and j <= N)
    corr = [float(np.corrcoef(W[:, i - 1], W[:, j - 1])[0, 1]) for i, j in pairs]
    return NoiseReport(N=N, T=T, replicas=R, probe_modes=modes, ks=ks, var_ratio=ratio,
                       pairs=pairs, correlation=corr, correlation_se=1.0 / math.sqrt(R), W=W)


def noise_accumulation(snapshots, params: ProposalParams, p: PotentialSpec,
                       spec: CovarianceSpec, T: float, conditional_mean: str = "limit",
                       n_inner: int = 2000, rng=None,
                       probe_modes=DEFAULT_PROBE_MODES,
                       probe_pairs=DEFAULT_PROBE_PAIRS) -> NoiseReport:
    """W^N(T) from stored trajectories.

    ``snapshots`` has shape ``(replicas, steps + 1, n)`` (or one trajectory
    ``(steps + 1, n)``) with every chain state from ``x^0`` on.
    """
    s = np.asarray(snapshots, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    N = params.N
    acc = NoiseAccumulator(params, p, spec, T, s.shape[0], conditional_mean, n_inner, rng)
    if s.shape[1] - 1 < acc.steps_needed:
        raise ValueError(f"need {acc.steps_needed} steps, trajectory has {s.shape[1] - 1}")
    rows = slice(0, s.shape[0])
    for k in range(acc.steps_needed):
        acc(rows, s[:, k, :N], s[:, k + 1, :N], k)
    return noise_report(acc.W, params, spec, T, probe_modes, probe_pairs)


def run_noise_accumulation(p: PotentialSpec, spec: CovarianceSpec, params: ProposalParams,
                           T: float, replicas: int, master_seed: int, cell: int = 0,
                           threads: int = 1, probe_modes=DEFAULT_PROBE_MODES,
                           probe_pairs=DEFAULT_PROBE_PAIRS) -> NoiseReport:
    """Run stationary replicas and accumulate W^N(T) on the fly."""
    rngs = replica_rngs(master_seed, replicas, cell)
    x0, _ = stationary_batch(p, spec, params.N, rngs)
    acc = NoiseAccumulator(params, p, spec, T, replicas)
    run_replicas(x0, params, p, spec, acc.steps_needed, rngs, observer=acc, threads=threads)
    return noise_report(acc.W, params, spec, T, probe_modes, probe_pairs)


# --------------------------------------------------------------------------
# chain vs SPDE
# --------------------------------------------------------------------------

FUNCTIONAL_NAMES = ("mode1", "mode2", "mode5", "normsq_P16")


def path_functionals(z0, zT, s: float, kind: str = "increment") -> dict[str, np.ndarray]:
    """Functionals of ``(z(0), z(T))`` evaluated per replica.

    ``kind="value"`` uses ``z(T)``; ``kind="increment"`` uses ``z(T) - z(0)``.
    Mode functionals are ``<v, phi_hat_j>_s = j^s v_j``, plus ``||P^16 v||_s^2``.
    """
    v = zT - z0 if kind == "increment" else np.asarray(zT)
    n = v.shape[-1]
    out = {}
    for j in (1, 2, 5):
        if j <= n:
            out[f"mode{j}"] = j**s * v[:, j - 1]
    m = min(16, n)
    w = mode_indices(m) ** (2.0 * s)
    out["normsq_P16"] = np.sum(w * v[:, :m] ** 2, axis=-1)
    return out


@dataclass
class DistanceRow:
    N: int
    functional: str
    ks: float
    wasserstein1: float
    n_samples: int


def chain_endpoint(p, spec, params: ProposalParams, T: float, replicas: int,
                   master_seed: int, cell: int, n_store: int, threads: int = 1):
    """Stationary replicas and their interpolant ``z^N(T)``."""
    N = params.N
    rngs = replica_rngs(master_seed, replicas, cell)
    x0, _ = stationary_batch(p, spec, N, rngs, n_store=n_store)
    pos = N * T
    k = int(math.floor(pos + 1e-9))
    frac = pos - k if pos - k > 1e-9 else 0.0
    xk = run_replicas(x0, params, p, spec, k, rngs, threads=threads).x if k else x0.copy()
    if frac:
        xk1 = run_replicas(xk, params, p, spec, 1, rngs, threads=threads).x
        return x0, (1 - frac) * xk + frac * xk1
    return x0, xk


def spde_endpoint(p, spec, sc: ScalingConstants, N: int, T: float, replicas: int,
                  master_seed: int, cell: int, n_store: int):
    """Stationary start and exact OU transition to time T (conjugate targets)."""
    rng = stream(master_seed, 0, "reference", cell)
    sd = np.sqrt(exact_mode_variances(p, spec, n_store, N))
    z0 = sd * rng.standard_normal((replicas, n_store))
    lam = spec.sqrt_eigenvalues(n_store)
    a = p.curvature(n_store)
    a[N:] = 0.0
    zT = exact_ou_transition(z0, lam, a, sc, T, rng) if T > 0 else z0.copy()
    return z0, zT


def weak_convergence_test(p: PotentialSpec, spec: CovarianceSpec, ell: float,
                          N_grid: Sequence[int], T: float, replicas: int, master_seed: int,
                          s: float = 0.0, kind: str = "increment", threads: int = 1,
                          reference_replicas: Optional[int] = None) -> list[DistanceRow]:
    """Two-sample KS / W1 between chain and SPDE functionals at time T, per N.

    Only modes ``<= N`` are compared; the SPDE is run at the chain's
    truncation.  ``reference_replicas`` defaults to ``replicas``.
    """
    sc = ScalingConstants.from_ell(ell)
    rows = []
    n_ref = reference_replicas or replicas
    for N in sorted(N_grid):
        n_store = max(N, 16)
        params = ProposalParams(ell, N, s)
        x0, xT = chain_endpoint(p, spec, params, T, replicas, master_seed, N, n_store, threads)
        z0, zT = spde_endpoint(p, spec, sc, N, T, n_ref, master_seed, N, n_store)
        fc = path_functionals(x0[:, :N], xT[:, :N], s, kind)
        fs = path_functionals(z0[:, :N], zT[:, :N], s, kind)
        for name in fc:
            rows.append(DistanceRow(N, name, empirical_ks(fc[name], fs[name]),
                                    empirical_wasserstein1(fc[name], fs[name]),
                                    int(fc[name].size)))
    return rows
