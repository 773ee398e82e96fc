"""Random-walk Metropolis step-size scaling: ESJD sweeps, audits and diffusion benchmarks."""

from .errors import ConfigError, NumericalError
from .rwm import make_rng, proposal_sigma, run_chain, run_chains
from .scaling import OPT_ACCEPT, OPT_ELL, OPT_SPEED, check_upper_bound, estimate_esjd, sweep_ell
from .targets import (
    TargetModel,
    build_dense_coupling,
    build_hier_gauss,
    build_iid_product,
    build_scale_mixture,
    model_from_config,
    synth_data,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NumericalError",
    "OPT_ACCEPT",
    "OPT_ELL",
    "OPT_SPEED",
    "TargetModel",
    "build_dense_coupling",
    "build_hier_gauss",
    "build_iid_product",
    "build_scale_mixture",
    "check_upper_bound",
    "estimate_esjd",
    "make_rng",
    "model_from_config",
    "proposal_sigma",
    "run_chain",
    "run_chains",
    "sweep_ell",
    "synth_data",
]
