"""Covariance forecasting and the sliding-window evaluation protocol.

A forecast draws joint samples of the latent functions at the requested
horizon inputs, assembles each draw into a dense covariance matrix, and
averages the surviving draws per horizon step. Draws that come back
non-finite (for example a precision sample too singular to invert) are
dropped; losing more than a tolerated fraction at any horizon step is a
hard error rather than a silently degraded forecast.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from .data import ReturnsDataset, SplitPlan, split_frame
from .errors import ConfigError, InvalidInputError, NumericalError
from .gp import default_inducing, induced_marginal_core, sample_qf
from .inference import TrainConfig, select_checkpoint, train, validation_score
from .kernels import DEFAULT_KERNEL_CONFIG, make_spec
from .likelihoods import (
    ModelConfig,
    assemble_covariance,
    f_to_matrix,
    make_model_config,
)
from .linalg import mvn_logpdf
from .model import constrained_noise, constrained_scale, init_params

#: Largest tolerated fraction of dropped covariance samples per step.
MAX_DROP_FRACTION = 0.10


class ForecastResult(NamedTuple):
    x: np.ndarray              # (H,) forecast inputs
    covariances: np.ndarray    # (H, D, D) mean over surviving samples
    n_samples: int
    n_dropped: int             # summed over horizon steps


def _sampled_covariances(config, kspec, params, x_star, noise):
    marginal, _ = induced_marginal_core(kspec, params.kernel, params.state, x_star)
    f = sample_qf(marginal, noise)                        # (R, G, H)
    fmat = f_to_matrix(config, jnp.swapaxes(f, -1, -2))   # (R, H, rows, nu)
    scale = constrained_scale(config, params)
    lam = constrained_noise(config, params)
    return assemble_covariance(config, scale, lam, fmat)  # (R, H, D, D)


_sampled_covariances_jit = jax.jit(_sampled_covariances, static_argnums=(0, 1))


def forecast_covariance(
    config: ModelConfig,
    kspec,
    params,
    x_star,
    rng: np.random.Generator,
    n_samples: int = 300,
) -> ForecastResult:
    """Monte Carlo covariance forecast at the inputs ``x_star``."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
    if x_star.size == 0 or not np.isfinite(x_star).all():
        raise InvalidInputError("forecast inputs must be non-empty and finite")
    if n_samples < 1:
        raise InvalidInputError(f"n_samples must be positive, got {n_samples}")
    noise = jnp.asarray(rng.standard_normal((n_samples, config.n_gps, x_star.size)))
    covs = np.asarray(_sampled_covariances_jit(config, kspec, params, jnp.asarray(x_star), noise))
    keep = np.isfinite(covs).all(axis=(-1, -2))           # (R, H)
    dropped_per_step = n_samples - keep.sum(axis=0)
    worst = int(dropped_per_step.max())
    if worst > MAX_DROP_FRACTION * n_samples:
        raise NumericalError(
            f"dropped {worst} of {n_samples} covariance samples at one horizon step, "
            f"more than the tolerated {MAX_DROP_FRACTION:.0%}"
        )
    weights = keep[..., None, None].astype(np.float64)
    mean = (covs * weights).sum(axis=0) / weights.sum(axis=0)
    return ForecastResult(
        x=x_star,
        covariances=mean,
        n_samples=n_samples,
        n_dropped=int(dropped_per_step.sum()),
    )


def score_forecast(covariances, y) -> np.ndarray:
    """Log density of each observation under a mean-zero Gaussian forecast."""
    covariances = np.asarray(covariances, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if covariances.ndim != 3 or covariances.shape[-1] != covariances.shape[-2]:
        raise InvalidInputError(f"covariances must be (H, D, D), got {covariances.shape}")
    if y.shape != covariances.shape[:2]:
        raise InvalidInputError(
            f"observations {y.shape} do not match forecasts {covariances.shape[:2]}"
        )
    if not np.isfinite(covariances).all() or not np.isfinite(y).all():
        raise InvalidInputError("forecast scoring requires finite inputs")
    return np.asarray(mvn_logpdf(jnp.asarray(y), jnp.asarray(covariances)))


class ProtocolResult(NamedTuple):
    scores: np.ndarray       # (n_splits, horizon) per-step log scores
    records: tuple           # per-split dicts with selection details
    variant: str


class ProtocolSettings(NamedTuple):
    """Everything one split evaluation needs; picklable for worker processes."""

    variant: str
    nu: Optional[int]
    n_inducing: int
    kernel_tree: dict
    tcfg: TrainConfig
    forecast_samples: int
    scale_init: float
    noise_init: float


def _evaluate_split(dataset: ReturnsDataset, split, settings: ProtocolSettings, rng):
    frame = split_frame(dataset, split)
    config = make_model_config(settings.variant, dataset.d, settings.nu)
    kspec, kparams = make_spec(settings.kernel_tree)
    z = default_inducing(settings.n_inducing, float(frame.x_train[0]), float(frame.x_train[-1]))
    params = init_params(
        config, kspec, kparams, z, rng,
        scale_init=settings.scale_init, noise_init=settings.noise_init,
    )
    has_val = frame.x_val.size > 0
    result = train(
        config, kspec, params, frame.x_train, frame.y_train, settings.tcfg, rng,
        x_val=frame.x_val if has_val else None,
        y_val=frame.y_val if has_val else None,
    )
    record = {"split": split.index, "selected_step": None, "val_score": None}
    chosen = result.params
    if result.checkpoints:
        best = select_checkpoint(result)
        chosen = best.params
        record["selected_step"] = best.step
        record["val_score"] = best.score
    forecast = forecast_covariance(
        config, kspec, chosen, frame.x_test, rng, settings.forecast_samples
    )
    record["n_dropped"] = forecast.n_dropped
    scores = score_forecast(forecast.covariances, frame.y_test)
    record["mean_score"] = float(scores.mean())
    return scores, record


def evaluate_protocol(
    dataset: ReturnsDataset,
    plan: SplitPlan,
    *,
    variant: str,
    rng: np.random.Generator,
    nu: Optional[int] = None,
    n_inducing: int = 30,
    kernel_tree: Optional[dict] = None,
    tcfg: Optional[TrainConfig] = None,
    forecast_samples: int = 300,
    scale_init: float = 1.0,
    noise_init: float = 1e-3,
    jobs: int = 1,
) -> ProtocolResult:
    """Train, select, forecast, and score every split of the plan.

    Each split gets a fresh model seeded from its own child of ``rng``, so
    results do not depend on evaluation order or on ``jobs``. With jobs > 1
    splits run in separate worker processes.
    """
    if plan.n != dataset.n:
        raise InvalidInputError(f"plan covers {plan.n} points, dataset has {dataset.n}")
    if jobs < 1:
        raise ConfigError(f"jobs must be positive, got {jobs}")
    settings = ProtocolSettings(
        variant=variant,
        nu=nu,
        n_inducing=n_inducing,
        kernel_tree=kernel_tree if kernel_tree is not None else DEFAULT_KERNEL_CONFIG,
        tcfg=tcfg if tcfg is not None else TrainConfig(),
        forecast_samples=forecast_samples,
        scale_init=scale_init,
        noise_init=noise_init,
    )
    children = rng.spawn(plan.n_splits)
    args = [(dataset, split, settings, children[i]) for i, split in enumerate(plan.splits)]
    if jobs == 1 or plan.n_splits == 1:
        outcomes = [_evaluate_split(*a) for a in args]
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=min(jobs, plan.n_splits), mp_context=ctx) as pool:
            outcomes = list(pool.map(_worker, args))
    scores = np.stack([s for s, _ in outcomes])
    records = tuple(r for _, r in outcomes)
    return ProtocolResult(scores=scores, records=records, variant=variant)


def _worker(packed):
    return _evaluate_split(*packed)


__all__ = [
    "ForecastResult",
    "ProtocolResult",
    "ProtocolSettings",
    "evaluate_protocol",
    "forecast_covariance",
    "score_forecast",
    "validation_score",
]
