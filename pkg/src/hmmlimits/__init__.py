"""Hidden Markov log-likelihoods: exact derivatives, limit statistics and experiments."""

__version__ = "0.1.0"

from .config import ExperimentConfig, config_for, from_json, load_config
from .deriv_engine import (DerivModel, ParamFamily, affine_family, constant_family, estimate_L, expected_rate,
                           iid_family, logp_derivs, make_family)
from .errors import (ConfigError, DegenerateVariance, ExperimentError, HmmLimitsError, ModelError)
from .hmm_model import (EmissionChannel, HmmSpec, bsc, build_hmm, exact_sequence_prob, simulate_hmm,
                        smoothed_identity)
from .limit_stats import IncrementModel
from .markov_core import StochasticMatrix, check_primitive, stationary, validate_kernel

__all__ = [
    "ConfigError", "DegenerateVariance", "DerivModel", "EmissionChannel", "ExperimentConfig", "ExperimentError",
    "HmmLimitsError", "HmmSpec", "IncrementModel", "ModelError", "ParamFamily", "StochasticMatrix",
    "affine_family", "bsc", "build_hmm", "check_primitive", "config_for", "constant_family", "estimate_L",
    "exact_sequence_prob", "expected_rate", "from_json", "iid_family", "load_config", "logp_derivs",
    "make_family", "simulate_hmm", "smoothed_identity", "stationary", "validate_kernel",
]
