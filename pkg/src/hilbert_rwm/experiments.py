"""The six experiments the harness can run.

Each experiment returns an :class:`Outcome`: CSV tables, JSON reports and a
list of threshold checks.  Thresholds come from ``calibration.toml``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from . import diagnostics as dg
from .config import OPTIMAL, ExperimentConfig
from .kernel import ProposalParams, run_chain, stationary_init
from .potentials import CONJUGATE_KINDS, exact_mode_variances
from .spde import beta_of_ell, optimal_ell
from .streams import ChainRng, stream


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)


@dataclass
class Outcome:
    experiment: str
    tables: dict[str, Table] = field(default_factory=dict)
    reports: dict[str, Any] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    cells: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def resolve_ells(cfg: ExperimentConfig) -> list[float]:
    star = None
    out = []
    for v in cfg.ell_grid:
        if v == OPTIMAL:
            star = star or optimal_ell().ell
            out.append(star)
        else:
            out.append(float(v))
    return out


def _map(fn: Callable, items: list, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _strictly_decreasing(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:]))


def _batch_se(flags: np.ndarray, batches: int) -> float:
    n = flags.size
    b = max(2, min(batches, n // 2))
    means = np.array([m.mean() for m in np.array_split(flags.astype(float), b)])
    return float(means.std(ddof=1) / math.sqrt(b))


def stationary_draws(cfg: ExperimentConfig, N: int, n: int, cell: int) -> tuple[np.ndarray, bool]:
    """``n`` draws from pi^N on the first N modes; exact for quadratic potentials.

    Otherwise they are thinned (stride N) states of one burned-in chain and
    the result is flagged approximate.
    """
    p, spec = cfg.potential, cfg.covariance
    if isinstance(p, CONJUGATE_KINDS):
        sd = np.sqrt(exact_mode_variances(p, spec, N, N))
        return sd * stream(cfg.master_seed, 0, "init", cell).standard_normal((n, N)), False
    rng = ChainRng.for_replica(cfg.master_seed, 0, cell)
    params = ProposalParams(resolve_ells(cfg)[0], N, cfg.s)
    start = stationary_init(p, spec, N, rng, params=params)
    res = run_chain(start.state, params, p, spec, n * N, rng, snapshot_stride=N)
    return res.snapshots[1:, :N], True


# --------------------------------------------------------------------------

def acceptance_sweep(cfg: ExperimentConfig, cal: dict, threads: int = 1) -> Outcome:
    c = cal["acceptance_sweep"]
    steps = cfg.steps or c["steps"]
    ells = resolve_ells(cfg)
    out = Outcome("acceptance_sweep")
    cells = [(ci, N, ell) for ci, (N, ell) in enumerate((N, e) for N in cfg.N_grid for e in ells)]

    def run_cell(item):
        ci, N, ell = item
        params = ProposalParams(ell, N, cfg.s)
        flags, qs, approx = [], [], False
        for r in range(cfg.replicas):
            rng = ChainRng.for_replica(cfg.master_seed, r, ci)
            start = stationary_init(cfg.potential, cfg.covariance, N, rng, n_store=cfg.n_store,
                                    params=params)
            approx |= start.approximate
            res = run_chain(start.state, params, cfg.potential, cfg.covariance, steps, rng)
            flags.append(res.accepted)
            qs.append(res.q)
        flags = np.concatenate(flags)
        q = np.concatenate(qs)
        rate = float(flags.mean())
        se = _batch_se(flags, c["batch_count"] * cfg.replicas)
        mean_alpha = float(np.mean(np.exp(np.minimum(q, 0.0))))
        return dict(cell=ci, N=N, ell=ell, beta_theory=beta_of_ell(ell), accept_rate=rate,
                    se=se, mean_alpha=mean_alpha, n_accepted=int(flags.sum()),
                    n_steps=int(flags.size), approximate_start=approx)

    results = _map(run_cell, cells, threads)
    out.tables["acceptance"] = Table(["N", "ell", "beta_theory", "accept_rate", "se"],
                                     [[r["N"], r["ell"], r["beta_theory"], r["accept_rate"], r["se"]]
                                      for r in results])
    nearest = min(results, key=lambda r: abs(r["accept_rate"] - 0.234))
    out.reports["acceptance"] = {"cells": results, "nearest_0234": nearest}
    out.cells = [{"cell": r["cell"], "label": f"N={r['N']},ell={r['ell']!r}",
                  "replicas": cfg.replicas, "roles": ["init", "noise", "accept"]} for r in results]

    tol = c["rate_tolerance"]
    for r in results:
        if r["N"] >= c["band_min_N"]:
            dev = r["accept_rate"] - r["beta_theory"]
            out.checks.append(Check(
                f"acceptance rate N={r['N']} ell={r['ell']:.4f}", abs(dev) <= tol,
                f"rate={r['accept_rate']:.4f} beta={r['beta_theory']:.4f} |dev|={abs(dev):.4f} <= {tol}"))
        z = abs(r["accept_rate"] - r["mean_alpha"]) / max(r["se"], 1e-12)
        out.checks.append(Check(
            f"accept count vs mean(1^e^q) N={r['N']} ell={r['ell']:.4f}", z <= 4.0,
            f"rate={r['accept_rate']:.5f} mean_alpha={r['mean_alpha']:.5f} z={z:.2f} <= 4"))
    if len(ells) > 1:
        for N in cfg.N_grid:
            rs = sorted((r for r in results if r["N"] == N), key=lambda r: r["ell"])
            rates = [r["accept_rate"] for r in rs]
            out.checks.append(Check(f"acceptance decreasing in ell N={N}",
                                    _strictly_decreasing(rates),
                                    "rates=" + ", ".join(f"{v:.4f}" for v in rates)))
    return out


# --------------------------------------------------------------------------

def q_distribution(cfg: ExperimentConfig, cal: dict, threads: int = 1) -> Outcome:
    c = cal["q_distribution"]
    n_ks = cfg.samples or c["ks_trend_samples"]
    n_mom = min(c["moment_samples"], n_ks)
    ells = resolve_ells(cfg)
    out = Outcome("q_distribution")
    cells = [(ci, N, ell) for ci, (N, ell) in enumerate((N, e) for N in cfg.N_grid for e in ells)]

    def run_cell(item):
        ci, N, ell = item
        params = ProposalParams(ell, N, cfg.s)
        approx = False
        if isinstance(cfg.potential, CONJUGATE_KINDS):
            q = dg.stationary_q_samples(cfg.potential, cfg.covariance, params, n_ks,
                                        stream(cfg.master_seed, 0, "inner", ci))
        else:
            rng = ChainRng.for_replica(cfg.master_seed, 0, ci)
            start = stationary_init(cfg.potential, cfg.covariance, N, rng, params=params)
            q = run_chain(start.state, params, cfg.potential, cfg.covariance, n_ks, rng).q
            approx = True
        mom = dg.q_moment_test(q[:n_mom], ell)
        full = dg.q_moment_test(q, ell)
        ref_rng = stream(cfg.master_seed, 0, "reference", ci)
        mu, sd = -ell**2, math.sqrt(2.0) * ell
        ref = ref_rng.normal(mu, sd, n_mom)
        ref2 = ref_rng.normal(mu, sd, n_mom)
        M = dg.q_limit_density_bound(ell)
        bound = dg.ks_wass_bound_check(q[:n_mom], ref, M)
        null = dg.ks_wass_bound_check(ref2, ref, M)
        return dict(cell=ci, N=N, ell=ell, moments=mom.to_dict(), ks_full=full.ks,
                    n_ks=int(q.size), bound=bound.to_dict(), null=null.to_dict(),
                    approximate=approx)

    results = _map(run_cell, cells, threads)
    out.tables["q_moments"] = Table(
        ["N", "ell", "n", "mean", "var", "mean_target", "var_target", "ks", "n_ks"],
        [[r["N"], r["ell"], r["moments"]["n"], r["moments"]["mean"], r["moments"]["var"],
          r["moments"]["mean_target"], r["moments"]["var_target"], r["ks_full"], r["n_ks"]]
         for r in results])
    out.tables["distances"] = Table(
        ["N", "functional", "ks", "wasserstein1", "n_samples"],
        [[r["N"], f"Q_ell={r['ell']:.6g}", r["bound"]["ks"], r["bound"]["wasserstein1"],
          r["bound"]["n_a"]] for r in results])
    out.reports["q_distribution"] = results
    out.cells = [{"cell": r["cell"], "label": f"N={r['N']},ell={r['ell']!r}", "replicas": 1,
                  "roles": ["inner", "reference"]} for r in results]

    for r in results:
        ell, m = r["ell"], r["moments"]
        if r["N"] >= c["moment_min_N"]:
            dm = abs(m["mean"] + ell**2)
            dv = abs(m["var"] - 2 * ell**2)
            out.checks.append(Check(f"Q mean N={r['N']} ell={ell:.4f}",
                                    dm <= c["mean_tolerance_rel"] * ell**2,
                                    f"mean={m['mean']:.4f} target={-ell**2:.4f} tol={c['mean_tolerance_rel'] * ell**2:.4f}"))
            out.checks.append(Check(f"Q variance N={r['N']} ell={ell:.4f}",
                                    dv <= c["var_tolerance_rel"] * 2 * ell**2,
                                    f"var={m['var']:.4f} target={2 * ell**2:.4f} tol={c['var_tolerance_rel'] * 2 * ell**2:.4f}"))
        if r["N"] in c["bound_N"]:
            b = r["bound"]
            out.checks.append(Check(f"KS <= sqrt(4 M W1) + slack, Q at N={r['N']} ell={ell:.4f}",
                                    b["bound_ok"],
                                    f"ks={b['ks']:.4f} sqrt(4MW)={b['bound']:.4f} slack={b['slack']:.4f}"))
            nl = r["null"]
            out.checks.append(Check(f"KS/W1 bound on reference null N={r['N']} ell={ell:.4f}",
                                    nl["bound_ok"],
                                    f"ks={nl['ks']:.4f} sqrt(4MW)={nl['bound']:.4f} slack={nl['slack']:.4f}"))
    if len(cfg.N_grid) > 1:
        for ell in ells:
            rs = sorted((r for r in results if r["ell"] == ell), key=lambda r: r["N"])
            ks = [r["ks_full"] for r in rs]
            out.checks.append(Check(f"Q KS to N(-l^2, 2l^2) decreasing in N ell={ell:.4f}",
                                    _strictly_decreasing(ks),
                                    ", ".join(f"N={r['N']}:{v:.5f}" for r, v in zip(rs, ks))
                                    + f" (n={rs[0]['n_ks']})"))
    return out


# --------------------------------------------------------------------------

def drift_diffusion(cfg: ExperimentConfig, cal: dict, threads: int = 1) -> Outcome:
    c = cal["drift_diffusion"]
    ell = resolve_ells(cfg)[0]
    probes = c["probes"]
    out = Outcome("drift_diffusion")
    drift_rows, diff_rows, summary = [], [], []

    for ci, N in enumerate(cfg.N_grid):
        params = ProposalParams(ell, N, cfg.s)

        def one_probe(i):
            rng = ChainRng.for_replica(cfg.master_seed, i, ci)
            start = stationary_init(cfg.potential, cfg.covariance, N, rng, params=params)
            return dg.estimate_one_step(start.state.x, params, cfg.potential, cfg.covariance,
                                        cfg.inner_mc, stream(cfg.master_seed, i, "inner", ci),
                                        method=c["method"])

        reps = _map(one_probe, list(range(probes)), threads)
        rel = np.array([r.relative_residual for r in reps])
        res = np.array([r.r_N_norm_s for r in reps])
        E = np.abs(np.array([r.E_N_entries for r in reps]))
        ratios = np.array([r.diffusion_diag_est / r.diffusion_diag_theory for r in reps])
        zod = np.array([np.abs(r.diffusion_offdiag_est) / np.maximum(r.diffusion_offdiag_se, 1e-300)
                        for r in reps])
        for i, r in enumerate(reps):
            drift_rows.append([N, i, r.relative_residual, r.r_N_norm_s])
            for j, est, th, se in zip(r.probe_modes, r.diffusion_diag_est,
                                      r.diffusion_diag_theory, r.diffusion_diag_se):
                diff_rows.append([N, i, f"({j},{j})", est, th, se])
            for (a, b), est, se in zip(r.probe_pairs, r.diffusion_offdiag_est, r.diffusion_offdiag_se):
                diff_rows.append([N, i, f"({a},{b})", est, 0.0, se])
        summary.append(dict(N=N, cell=ci, mean_relative_residual=float(rel.mean()),
                            mean_r_N_norm_s=float(res.mean()),
                            max_mean_abs_E=float(E.mean(0).max()) if E.size else 0.0,
                            diag_ratio_min=float(ratios.min()) if ratios.size else math.nan,
                            diag_ratio_max=float(ratios.max()) if ratios.size else math.nan,
                            offdiag_max_z=float(zod.max()) if zod.size else 0.0,
                            mean_acceptance=float(np.mean([r.mean_acceptance for r in reps])),
                            probes=[r.to_dict() for r in reps]))

    out.tables["drift_residual"] = Table(["N", "probe", "relative_residual", "r_N_norm_s"], drift_rows)
    out.tables["diffusion"] = Table(["N", "probe", "entry", "estimate", "theory", "se"], diff_rows)
    out.reports["drift_diffusion"] = {"ell": ell, "beta": beta_of_ell(ell), "s": cfg.s,
                                      "method": c["method"], "n_inner": cfg.inner_mc,
                                      "per_N": summary}
    out.cells = [{"cell": s["cell"], "label": f"N={s['N']}", "replicas": probes,
                  "roles": ["init", "inner"]} for s in summary]

    for s in summary:
        if s["N"] == c["residual_check_N"]:
            out.checks.append(Check(
                f"drift relative s-norm residual N={s['N']}",
                s["mean_relative_residual"] <= c["relative_residual_max"],
                f"mean over {probes} probes = {s['mean_relative_residual']:.4f} <= {c['relative_residual_max']}"))
        if s["N"] >= c["diffusion_check_min_N"]:
            tol = c["diffusion_ratio_tolerance"]
            ok = abs(s["diag_ratio_min"] - 1) <= tol and abs(s["diag_ratio_max"] - 1) <= tol
            out.checks.append(Check(
                f"diffusion diagonal ratios N={s['N']}", ok,
                f"range [{s['diag_ratio_min']:.4f}, {s['diag_ratio_max']:.4f}] within 1 +- {tol}"))
            out.checks.append(Check(
                f"diffusion off-diagonal N={s['N']}", s["offdiag_max_z"] <= c["offdiag_z_max"],
                f"max |est|/SE = {s['offdiag_max_z']:.2f} <= {c['offdiag_z_max']}"))
    if len(summary) > 1:
        srt = sorted(summary, key=lambda s: s["N"])
        vals = [s["mean_r_N_norm_s"] for s in srt]
        out.checks.append(Check("drift residual decreasing in N", _strictly_decreasing(vals),
                                ", ".join(f"N={s['N']}:{v:.4f}" for s, v in zip(srt, vals))))
        vals = [s["max_mean_abs_E"] for s in srt]
        out.checks.append(Check("diffusion residual decreasing in N", _strictly_decreasing(vals),
                                ", ".join(f"N={s['N']}:{v:.5f}" for s, v in zip(srt, vals))))
    return out


# --------------------------------------------------------------------------

def zeta_concentration(cfg: ExperimentConfig, cal: dict, threads: int = 1) -> Outcome:
    c = cal["zeta_concentration"]
    n = cfg.samples or c["samples"]
    out = Outcome("zeta_concentration")
    rows = []
    for ci, N in enumerate(cfg.N_grid):
        x, approx = stationary_draws(cfg, N, n, ci)
        z = dg.zeta_statistic(x, cfg.potential, cfg.covariance, N)
        mean, var = float(z.mean()), float(z.var(ddof=1))
        band = c["band_multiplier"] / math.sqrt(N)
        rows.append([N, int(z.size), mean, var, 2.0 / N])
        out.checks.append(Check(f"mean ||zeta||^2/N N={N}", abs(mean - 1) <= band,
                                f"mean={mean:.5f} within 1 +- {band:.4f}"
                                + (" (approximate start)" if approx else "")))
        out.cells.append({"cell": ci, "label": f"N={N}", "replicas": 1, "roles": ["init"]})
    out.tables["zeta"] = Table(["N", "n", "mean", "var", "var_gaussian_reference"], rows)
    out.reports["zeta"] = [dict(zip(out.tables["zeta"].columns, r)) for r in rows]
    return out


# --------------------------------------------------------------------------

def noise_accumulation(cfg: ExperimentConfig, cal: dict, threads: int = 1) -> Outcome:
    c = cal["noise_accumulation"]
    ell = resolve_ells(cfg)[0]
    out = Outcome("noise_accumulation")
    rows, reports = [], []
    for ci, N in enumerate(cfg.N_grid):
        params = ProposalParams(ell, N, cfg.s)
        rep = dg.run_noise_accumulation(cfg.potential, cfg.covariance, params, cfg.T,
                                        cfg.replicas, cfg.master_seed, ci, threads)
        reports.append(rep.to_dict())
        out.cells.append({"cell": ci, "label": f"N={N}", "replicas": cfg.replicas,
                          "roles": ["init", "noise", "accept"]})
        for j, ks, vr in zip(rep.probe_modes, rep.ks, rep.var_ratio):
            rows.append([N, f"mode{j}", ks, vr])
        for (a, b), r in zip(rep.pairs, rep.correlation):
            rows.append([N, f"corr({a},{b})", math.nan, r])
        if N >= c["check_min_N"]:
            out.checks.append(Check(f"W^N(T) mode-wise KS N={N}", max(rep.ks) < c["ks_max"],
                                    "ks=" + ", ".join(f"{v:.4f}" for v in rep.ks) + f" < {c['ks_max']}"))
            out.checks.append(Check(f"Var W^N_j(T) / (T lambda_j^2) N={N}",
                                    max(abs(v - 1) for v in rep.var_ratio) <= c["var_tolerance_rel"],
                                    "ratios=" + ", ".join(f"{v:.4f}" for v in rep.var_ratio)))
            lim = c["corr_z_max"] * rep.correlation_se
            out.checks.append(Check(f"W^N cross-mode correlation N={N}",
                                    all(abs(v) <= lim for v in rep.correlation),
                                    "corr=" + ", ".join(f"{v:.4f}" for v in rep.correlation)
                                    + f" within +-{lim:.4f}"))
    out.tables["noise"] = Table(["N", "quantity", "ks", "value"], rows)
    out.reports["noise_accumulation"] = {"ell": ell, "T": cfg.T, "per_N": reports}
    return out


# --------------------------------------------------------------------------

def weak_convergence(cfg: ExperimentConfig, cal: dict, threads: int = 1) -> Outcome:
    c = cal["weak_convergence"]
    ell = resolve_ells(cfg)[0]
    out = Outcome("weak_convergence")
    rows = dg.weak_convergence_test(cfg.potential, cfg.covariance, ell, cfg.N_grid, cfg.T,
                                    cfg.replicas, cfg.master_seed, s=cfg.s,
                                    kind=c["functional_kind"] if cfg.T > 0 else "value",
                                    threads=threads)
    out.tables["distances"] = Table(["N", "functional", "ks", "wasserstein1", "n_samples"],
                                    [[r.N, r.functional, r.ks, r.wasserstein1, r.n_samples]
                                     for r in rows])
    out.reports["weak_convergence"] = {"ell": ell, "T": cfg.T, "rows": [asdict(r) for r in rows],
                                       "two_sample_band_99": dg.kolmogorov_band(cfg.replicas, cfg.replicas)}
    out.cells = [{"cell": N, "label": f"N={N}", "replicas": cfg.replicas,
                  "roles": ["init", "noise", "accept", "reference"]} for N in cfg.N_grid]
    names = sorted({r.functional for r in rows})
    if cfg.T == 0:
        band = dg.kolmogorov_band(cfg.replicas, cfg.replicas)
        for r in rows:
            out.checks.append(Check(f"T=0 {r.functional} N={r.N}", r.ks <= band,
                                    f"ks={r.ks:.4f} <= two-sample 99% band {band:.4f}"))
        return out
    for name in names:
        rs = sorted((r for r in rows if r.functional == name), key=lambda r: r.N)
        if len(rs) > 1:
            out.checks.append(Check(f"KS decreasing in N ({name})",
                                    _strictly_decreasing([r.ks for r in rs]),
                                    ", ".join(f"N={r.N}:{r.ks:.4f}" for r in rs)))
        for r in rs:
            if r.N == c["check_N"]:
                out.checks.append(Check(f"KS < {c['ks_max']} at N={r.N} ({name})",
                                        r.ks < c["ks_max"], f"ks={r.ks:.4f}"))
    return out


EXPERIMENT_FUNCS = {
    "acceptance_sweep": acceptance_sweep,
    "q_distribution": q_distribution,
    "drift_diffusion": drift_diffusion,
    "zeta_concentration": zeta_concentration,
    "noise_accumulation": noise_accumulation,
    "weak_convergence": weak_convergence,
}
