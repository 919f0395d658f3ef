"""Experiment configuration files (TOML) and the calibration table."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import tomli

from .potentials import PotentialSpec, SobolevSquared, potential_from_config
from .spectral import CovarianceSpec, Explicit, PowerLaw, covariance_from_config

EXPERIMENTS = (
    "acceptance_sweep",
    "drift_diffusion",
    "q_distribution",
    "weak_convergence",
    "noise_accumulation",
    "zeta_concentration",
)
OPTIMAL = "optimal"


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violation found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    experiment: str
    covariance: CovarianceSpec
    potential: PotentialSpec
    N_grid: list[int]
    ell_grid: list[Union[float, str]]
    s: float = 0.0
    T: float = 1.0
    replicas: int = 1
    inner_mc: int = 100_000
    master_seed: int = 0
    output_dir: str = "runs/out"
    steps: Optional[int] = None
    samples: Optional[int] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_store(self) -> int:
        return max(self.N_grid) + 64

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "covariance": self.covariance.to_config(),
            "potential": self.potential.to_config(),
            "N_grid": list(self.N_grid),
            "ell_grid": list(self.ell_grid),
            "s": self.s,
            "T": self.T,
            "replicas": self.replicas,
            "inner_mc": self.inner_mc,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "steps": self.steps,
            "samples": self.samples,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file.

    Raises :class:`ConfigError` listing all problems at once; TOML syntax
    errors carry the line and column from the parser.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None) or text.count("\n", 0, getattr(exc, "pos", 0) or 0) + 1
        col = getattr(exc, "colno", None) or 1
        msg = getattr(exc, "msg", None) or str(exc)
        raise ConfigError([f"{path}:{line}:{col}: parse error at line {line}, column {col}: {msg}"]) from exc
    return config_from_dict(raw)


def _get(raw: dict, dotted: str):
    node: Any = raw
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    return node


def config_from_dict(raw: dict) -> ExperimentConfig:
    problems: list[str] = []

    def need(key):
        try:
            return _get(raw, key)
        except KeyError:
            problems.append(f"missing required key `{key}`")
            return None

    experiment = need("experiment")
    if experiment is not None and experiment not in EXPERIMENTS:
        problems.append(f"`experiment` must be one of {', '.join(EXPERIMENTS)}; got {experiment!r}")

    covariance = None
    cov_raw = need("covariance")
    if cov_raw is not None:
        if cov_raw.get("law", "power") != "explicit" and "kappa" not in cov_raw:
            problems.append("missing required key `covariance.kappa`")
        else:
            try:
                covariance = covariance_from_config(cov_raw)
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"covariance: {exc}")

    potential = None
    pot_raw = raw.get("potential")
    if not isinstance(pot_raw, dict) or "kind" not in pot_raw:
        problems.append("missing required key `potential.kind`")
    else:
        try:
            potential = potential_from_config(pot_raw)
        except (ValueError, KeyError, TypeError) as exc:
            problems.append(f"potential: {exc}")

    s = raw.get("s", 0.0)
    if not isinstance(s, (int, float)) or s < 0:
        problems.append(f"`s` must be a nonnegative number, got {s!r}")
        s = 0.0
    s = float(s)
    if isinstance(covariance, PowerLaw) and not s < covariance.kappa - 0.5:
        problems.append(
            f"s={s:g} >= kappa - 1/2 = {covariance.kappa - 0.5:g} violates the trace-class "
            "condition on C_s (eigenvalue decay M- <= j^kappa lambda_j <= M+ requires s < kappa - 1/2)"
        )
    if isinstance(potential, SobolevSquared) and potential.s > s:
        problems.append(
            f"potential.s={potential.s:g} exceeds s={s:g}: Psi would not be quadratically "
            "bounded on H^s"
        )

    N_grid = raw.get("N_grid")
    if N_grid is None:
        problems.append("missing required key `N_grid`")
        N_grid = []
    elif not isinstance(N_grid, list) or not N_grid or not all(
            isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in N_grid):
        problems.append(f"`N_grid` must be a non-empty list of positive integers, got {N_grid!r}")
        N_grid = []
    if isinstance(covariance, Explicit) and N_grid and max(N_grid) + 64 > len(covariance.lambdas):
        problems.append(
            f"explicit covariance lists {len(covariance.lambdas)} modes; "
            f"max(N_grid) + 64 = {max(N_grid) + 64} are stored"
        )

    ell_grid = raw.get("ell_grid", [OPTIMAL])
    if isinstance(ell_grid, (str, int, float)):
        ell_grid = [ell_grid]
    good_ell = []
    for v in ell_grid:
        if v == OPTIMAL or (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
            good_ell.append(v if v == OPTIMAL else float(v))
        else:
            problems.append(f"`ell_grid` entries must be positive or \"optimal\", got {v!r}")

    T = raw.get("T", 1.0)
    if not isinstance(T, (int, float)) or T < 0 or not math.isfinite(T):
        problems.append(f"`T` must be a nonnegative number, got {T!r}")
        T = 1.0

    ints = {}
    for key, default, minimum in (("replicas", 1, 1), ("inner_mc", 100_000, 1),
                                  ("master_seed", 0, 0), ("steps", None, 1),
                                  ("samples", None, 1)):
        v = raw.get(key, default)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < minimum):
            problems.append(f"`{key}` must be an integer >= {minimum}, got {v!r}")
            v = default
        ints[key] = v
    if ints["master_seed"] is not None and ints["master_seed"] >= 2**64:
        problems.append("`master_seed` must fit in 64 bits")

    output_dir = raw.get("output_dir", "runs/out")
    if not isinstance(output_dir, str) or not output_dir:
        problems.append("`output_dir` must be a non-empty string")

    known = {"experiment", "covariance", "potential", "s", "N_grid", "ell_grid", "T",
             "replicas", "inner_mc", "master_seed", "output_dir", "steps", "samples"}
    for key in raw:
        if key not in known:
            problems.append(f"unknown key `{key}`")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        experiment=experiment, covariance=covariance, potential=potential,
        N_grid=list(N_grid), ell_grid=good_ell, s=s, T=float(T),
        replicas=ints["replicas"], inner_mc=ints["inner_mc"],
        master_seed=ints["master_seed"], output_dir=output_dir,
        steps=ints["steps"], samples=ints["samples"], raw=raw,
    )


def calibration_text() -> str:
    return resources.files("hilbert_rwm").joinpath("calibration.toml").read_text(encoding="utf-8")


def load_calibration() -> dict:
    return tomli.loads(calibration_text())


def calibration_hash() -> str:
    return hashlib.sha256(calibration_text().encode("utf-8")).hexdigest()
