"""Variational inference for Wishart and inverse Wishart process models.

The package models the time-varying covariance matrix of a multivariate
series by driving a (inverse) Wishart matrix process with independent
Gaussian processes, and fits the latent processes with sparse variational
inference over inducing points.

Double precision is mandatory for the linear algebra in this package, so
importing ``wishvi`` enables 64-bit mode in JAX globally.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .errors import ConfigError, DataError, InvalidInputError, NumericalError
from .kernels import KernelParams, KernelSpec, default_kernel, eval_kernel, kernel_matrix, make_spec
from .likelihoods import ModelConfig, assemble_covariance, make_model_config
from .gp import MarginalBatch, VariationalState, induced_marginal, kl_qu_pu, sample_qf
from .model import ModelParams, init_params
from .inference import TrainConfig, elbo_estimate, grad_estimate, select_checkpoint, train
from .data import ReturnsDataset, SplitPlan, load_prices, make_splits, map_time_inputs, to_log_returns
from .forecast import ForecastResult, evaluate_protocol, forecast_covariance, score_forecast
from .diagnostics import SyntheticSpec, generate_synthetic, gradient_variance_experiment

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "InvalidInputError",
    "NumericalError",
    "KernelParams",
    "KernelSpec",
    "default_kernel",
    "eval_kernel",
    "kernel_matrix",
    "make_spec",
    "ModelConfig",
    "assemble_covariance",
    "make_model_config",
    "MarginalBatch",
    "VariationalState",
    "induced_marginal",
    "kl_qu_pu",
    "sample_qf",
    "ModelParams",
    "init_params",
    "TrainConfig",
    "elbo_estimate",
    "grad_estimate",
    "select_checkpoint",
    "train",
    "ReturnsDataset",
    "SplitPlan",
    "load_prices",
    "make_splits",
    "map_time_inputs",
    "to_log_returns",
    "ForecastResult",
    "evaluate_protocol",
    "forecast_covariance",
    "score_forecast",
    "SyntheticSpec",
    "generate_synthetic",
    "gradient_variance_experiment",
    "__version__",
]
