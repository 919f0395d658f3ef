"""Random-walk Metropolis on a Hilbert space and its diffusion limit."""

__version__ = "0.1.0"

from .spectral import PowerLaw, Explicit, trace_Cr, sobolev_norm, apply_C_power, kl_sample
from .potentials import Zero, DiagonalQuadratic, SobolevSquared, CosineTilt, psi, grad_psi
from .kernel import (ChainState, ProposalParams, StepRecord, ChainResult, propose, step,
                     run_chain, acceptance_exponent_direct, acceptance_exponent_stable)
from .spde import ScalingConstants, beta_of_ell, h_of_ell, optimal_ell
from .config import ExperimentConfig, ConfigError, load_config

__all__ = [
    "PowerLaw", "Explicit", "trace_Cr", "sobolev_norm", "apply_C_power", "kl_sample",
    "Zero", "DiagonalQuadratic", "SobolevSquared", "CosineTilt", "psi", "grad_psi",
    "ChainState", "ProposalParams", "StepRecord", "ChainResult", "propose", "step", "run_chain",
    "acceptance_exponent_direct", "acceptance_exponent_stable",
    "ScalingConstants", "beta_of_ell", "h_of_ell", "optimal_ell",
    "ExperimentConfig", "ConfigError", "load_config", "__version__",
]
