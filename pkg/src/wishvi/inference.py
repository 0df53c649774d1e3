"""Stochastic variational training.

The objective is the evidence lower bound: reparameterized Monte Carlo
samples of the expected log-likelihood, rescaled from the minibatch to the
dataset, minus the closed-form KL between the variational distribution and
the GP prior over inducing values. Precision-side noisy variants optionally
add the log prior over the noise diagonal so its estimate is MAP rather
than maximum likelihood.

Optimization is plain Adam in ascent form with an optional stepwise
exponential learning-rate decay. Steps whose objective or gradient comes
back non-finite are skipped without touching the parameters or the
optimizer moments; a long run of consecutive skips aborts training.

All randomness is drawn from a numpy Generator on the host and passed into
jitted pure functions, so a fixed seed fixes the entire run, including the
training log.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from .errors import ConfigError, InvalidInputError, NumericalError
from .gp import induced_marginal_core, induced_variances, kl_qu_pu, sample_qf, sample_qf_pointwise
from .kernels import KernelSpec
from .likelihoods import (
    ModelConfig,
    assemble_covariance,
    f_to_matrix,
    log_prior_noise,
    loglik,
)
from .linalg import mvn_logpdf
from .model import (
    ModelParams,
    arrays_to_params,
    constrained_noise,
    constrained_scale,
    layout_header,
    params_to_arrays,
    rebuild_from_layout,
)

#: Consecutive non-finite steps tolerated before training aborts.
MAX_CONSECUTIVE_SKIPS = 50

SAMPLE_MODES = ("joint", "per_point")


@dataclass(frozen=True)
class TrainConfig:
    """Static training settings.

    ``sample_mode`` picks between one joint draw of q(F) across the batch
    and independent pointwise draws; both give unbiased objective
    estimates because the likelihood factorizes over points.
    """

    n_steps: int = 20000
    batch_size: Optional[int] = None       # None trains full batch
    n_samples: int = 2                     # Monte Carlo samples per step
    learning_rate: float = 0.01
    lr_decay_rate: float = 0.99            # multiplier applied every interval
    lr_decay_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    optimize_inducing: bool = True
    sample_mode: str = "joint"
    noise_prior: bool = True               # MAP for Lambda in precision variants
    noise_prior_a: float = 2.0
    noise_prior_b: float = 0.001
    checkpoint_every: int = 300
    val_samples: int = 64
    patience: Optional[int] = None         # validation evaluations without improvement

    def __post_init__(self):
        if self.n_steps < 0:
            raise ConfigError(f"n_steps must be non-negative, got {self.n_steps}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be positive, got {self.n_samples}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.lr_decay_rate <= 1.0:
            raise ConfigError(f"lr_decay_rate must be in (0, 1], got {self.lr_decay_rate}")
        if self.lr_decay_every < 1:
            raise ConfigError(f"lr_decay_every must be positive, got {self.lr_decay_every}")
        if self.sample_mode not in SAMPLE_MODES:
            raise ConfigError(f"sample_mode must be one of {SAMPLE_MODES}, got {self.sample_mode!r}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be positive, got {self.checkpoint_every}")
        if self.val_samples < 1:
            raise ConfigError(f"val_samples must be positive, got {self.val_samples}")
        if not (self.noise_prior_a > 0.0 and self.noise_prior_b > 0.0):
            raise ConfigError("noise prior shape and scale must be positive")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be positive when set, got {self.patience}")

    def lr_at(self, step: int) -> float:
        return self.learning_rate * self.lr_decay_rate ** (step // self.lr_decay_every)


def _uses_noise_prior(config: ModelConfig, noise_prior: bool) -> bool:
    return noise_prior and config.has_noise and config.is_precision


def _objective(
    params: ModelParams,
    x,
    y,
    noise,
    scale_factor,
    *,
    config: ModelConfig,
    kspec: KernelSpec,
    sample_mode: str,
    use_prior: bool,
    prior_a: float,
    prior_b: float,
):
    """Monte Carlo ELBO estimate; ``noise`` has shape (R, G, Nb)."""
    if sample_mode == "joint":
        marginal, lz = induced_marginal_core(kspec, params.kernel, params.state, x)
        f = sample_qf(marginal, noise)
    else:
        mean, var, lz = induced_variances(kspec, params.kernel, params.state, x)
        f = sample_qf_pointwise(mean, var, noise)
    fmat = f_to_matrix(config, jnp.swapaxes(f, -1, -2))      # (R, Nb, rows, nu)
    a = constrained_scale(config, params)
    lam = constrained_noise(config, params)
    ll = loglik(config, y, a, lam, fmat)                     # (R, Nb)
    expected = scale_factor * jnp.sum(jnp.mean(ll, axis=0))
    obj = expected - kl_qu_pu(params.state, lz)
    if use_prior:
        obj = obj + log_prior_noise(lam, prior_a, prior_b)
    return obj


@lru_cache(maxsize=None)
def _value_fn(config, kspec, sample_mode, use_prior, prior_a, prior_b):
    def fn(params, x, y, noise, scale_factor):
        return _objective(
            params, x, y, noise, scale_factor,
            config=config, kspec=kspec, sample_mode=sample_mode,
            use_prior=use_prior, prior_a=prior_a, prior_b=prior_b,
        )

    return jax.jit(fn)


def _mask_inducing(grads: ModelParams) -> ModelParams:
    state = grads.state._replace(z=jnp.zeros_like(grads.state.z))
    return grads._replace(state=state)


@lru_cache(maxsize=None)
def _value_and_grad_fn(config, kspec, sample_mode, use_prior, prior_a, prior_b, optimize_inducing):
    base = _value_fn(config, kspec, sample_mode, use_prior, prior_a, prior_b)

    def fn(params, x, y, noise, scale_factor):
        value, grads = jax.value_and_grad(base.__wrapped__)(params, x, y, noise, scale_factor)
        if not optimize_inducing:
            grads = _mask_inducing(grads)
        return value, grads

    return jax.jit(fn)


def _check_data(x, y, config: ModelConfig):
    x = jnp.asarray(x, dtype=jnp.float64)
    y = jnp.asarray(y, dtype=jnp.float64)
    if x.ndim != 1 or y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise InvalidInputError(
            f"expected x (N,) and y (N, D) with matching N, got {x.shape} and {y.shape}"
        )
    if y.shape[1] != config.d:
        raise InvalidInputError(f"y has dimension {y.shape[1]}, model expects {config.d}")
    if x.shape[0] == 0:
        raise InvalidInputError("training data is empty")
    if not bool(jnp.all(jnp.isfinite(x))) or not bool(jnp.all(jnp.isfinite(y))):
        raise InvalidInputError("training data contains non-finite values")
    return x, y


def _draw_noise(rng: np.random.Generator, n_samples: int, n_gps: int, n_points: int):
    return jnp.asarray(rng.standard_normal((n_samples, n_gps, n_points)))


def elbo_estimate(
    config: ModelConfig,
    kspec: KernelSpec,
    params: ModelParams,
    x,
    y,
    rng: np.random.Generator,
    *,
    n_samples: int = 2,
    sample_mode: str = "joint",
    total_n: Optional[int] = None,
    noise_prior: bool = True,
    prior_a: float = 2.0,
    prior_b: float = 0.001,
) -> float:
    """One Monte Carlo estimate of the objective on the given points.

    If the points are a minibatch of a larger dataset, pass the full size
    as ``total_n`` so the likelihood term is rescaled.
    """
    x, y = _check_data(x, y, config)
    if sample_mode not in SAMPLE_MODES:
        raise ConfigError(f"sample_mode must be one of {SAMPLE_MODES}, got {sample_mode!r}")
    scale = 1.0 if total_n is None else total_n / x.shape[0]
    noise = _draw_noise(rng, n_samples, config.n_gps, x.shape[0])
    fn = _value_fn(config, kspec, sample_mode, _uses_noise_prior(config, noise_prior), prior_a, prior_b)
    return float(fn(params, x, y, noise, jnp.asarray(scale)))


def grad_estimate(
    config: ModelConfig,
    kspec: KernelSpec,
    params: ModelParams,
    x,
    y,
    rng: np.random.Generator,
    *,
    n_samples: int = 2,
    sample_mode: str = "joint",
    total_n: Optional[int] = None,
    noise_prior: bool = True,
    prior_a: float = 2.0,
    prior_b: float = 0.001,
    optimize_inducing: bool = True,
):
    """Objective value and its gradient pytree, one Monte Carlo draw.

    Value and gradient use common random numbers: they come from the same
    draw of q(F).
    """
    x, y = _check_data(x, y, config)
    if sample_mode not in SAMPLE_MODES:
        raise ConfigError(f"sample_mode must be one of {SAMPLE_MODES}, got {sample_mode!r}")
    scale = 1.0 if total_n is None else total_n / x.shape[0]
    noise = _draw_noise(rng, n_samples, config.n_gps, x.shape[0])
    fn = _value_and_grad_fn(
        config, kspec, sample_mode, _uses_noise_prior(config, noise_prior),
        prior_a, prior_b, optimize_inducing,
    )
    value, grads = fn(params, x, y, noise, jnp.asarray(scale))
    return float(value), grads


def objective_with_noise(
    config: ModelConfig,
    kspec: KernelSpec,
    params: ModelParams,
    x,
    y,
    noise,
    *,
    scale_factor: float = 1.0,
    sample_mode: str = "joint",
    noise_prior: bool = True,
    prior_a: float = 2.0,
    prior_b: float = 0.001,
):
    """Objective at an explicit noise draw; deterministic in its inputs.

    This is the hook for finite-difference checks: hold ``noise`` fixed and
    the estimate becomes a smooth function of the parameters.
    """
    fn = _value_fn(config, kspec, sample_mode, _uses_noise_prior(config, noise_prior), prior_a, prior_b)
    return fn(params, jnp.asarray(x), jnp.asarray(y), jnp.asarray(noise), jnp.asarray(scale_factor))


class AdamState(NamedTuple):
    m: ModelParams
    v: ModelParams
    step: jnp.ndarray


def adam_init(params: ModelParams) -> AdamState:
    zeros = jax.tree.map(jnp.zeros_like, params)
    return AdamState(m=zeros, v=jax.tree.map(jnp.zeros_like, params), step=jnp.asarray(0))


def _adam_apply(params, opt, grads, lr, beta1, beta2, eps):
    step = opt.step + 1
    m = jax.tree.map(lambda mo, g: beta1 * mo + (1.0 - beta1) * g, opt.m, grads)
    v = jax.tree.map(lambda vo, g: beta2 * vo + (1.0 - beta2) * g * g, opt.v, grads)
    t = step.astype(jnp.float64)
    mc = 1.0 / (1.0 - beta1**t)
    vc = 1.0 / (1.0 - beta2**t)
    new_params = jax.tree.map(
        lambda p, mo, vo: p + lr * (mo * mc) / (jnp.sqrt(vo * vc) + eps), params, m, v
    )
    return new_params, AdamState(m=m, v=v, step=step)


GRAD_BLOCKS = ("z", "mu", "chol", "kernel", "scale", "noise")


def _block_norms(grads: ModelParams):
    """Euclidean gradient norm per parameter block, in GRAD_BLOCKS order."""

    def norm(tree):
        leaves = [jnp.ravel(leaf) for leaf in jax.tree.leaves(tree)]
        return jnp.linalg.norm(jnp.concatenate(leaves)) if leaves else None

    return tuple(
        norm(tree)
        for tree in (grads.state.z, grads.state.mu, grads.state.chol_raw,
                     grads.kernel, grads.scale_raw, grads.noise_raw)
    )


@lru_cache(maxsize=None)
def _step_fn(config, kspec, sample_mode, use_prior, prior_a, prior_b,
             optimize_inducing, beta1, beta2, eps):
    vg = _value_and_grad_fn(
        config, kspec, sample_mode, use_prior, prior_a, prior_b, optimize_inducing
    )

    def fn(params, opt, x, y, noise, scale_factor, lr):
        value, grads = vg.__wrapped__(params, x, y, noise, scale_factor)
        leaves_ok = [jnp.all(jnp.isfinite(leaf)) for leaf in jax.tree.leaves(grads)]
        ok = jnp.isfinite(value) & jnp.asarray(leaves_ok).all()

        def apply(_):
            return _adam_apply(params, opt, grads, lr, beta1, beta2, eps)

        def skip(_):
            return params, opt

        new_params, new_opt = jax.lax.cond(ok, apply, skip, None)
        gnorms = tuple(g for g in _block_norms(grads) if g is not None)
        return new_params, new_opt, value, ok, gnorms

    return jax.jit(fn)


@lru_cache(maxsize=None)
def _val_score_fn(config, kspec):
    def fn(params, x_val, y_val, noise):
        marginal, _ = induced_marginal_core(kspec, params.kernel, params.state, x_val)
        f = sample_qf(marginal, noise)                       # (Rv, G, Nv)
        fmat = f_to_matrix(config, jnp.swapaxes(f, -1, -2))
        a = constrained_scale(config, params)
        lam = constrained_noise(config, params)
        covs = assemble_covariance(config, a, lam, fmat)     # (Rv, Nv, D, D)
        return jnp.mean(mvn_logpdf(y_val, jnp.mean(covs, axis=0)))

    return jax.jit(fn)


def validation_score(
    config: ModelConfig,
    kspec: KernelSpec,
    params: ModelParams,
    x_val,
    y_val,
    rng: np.random.Generator,
    n_samples: int = 64,
) -> float:
    """Mean predictive log score per held-out point.

    Covariance forecasts are the Monte Carlo average of assembled
    covariance samples; each point is scored under a mean-zero Gaussian.
    """
    x_val, y_val = _check_data(x_val, y_val, config)
    noise = _draw_noise(rng, n_samples, config.n_gps, x_val.shape[0])
    return float(_val_score_fn(config, kspec)(params, x_val, y_val, noise))


class CheckpointRecord(NamedTuple):
    step: int
    score: float
    params: ModelParams


class TrainResult(NamedTuple):
    params: ModelParams
    opt_state: AdamState
    log: list
    checkpoints: list


def select_checkpoint(result) -> CheckpointRecord:
    """Best checkpoint by validation score; non-finite scores never win.

    Ties go to the earliest checkpoint. Accepts a TrainResult or a plain
    list of checkpoint records. A TrainResult without any usable
    checkpoint falls back to the final parameters with a warning; a bare
    list cannot, so it raises.
    """
    is_result = isinstance(result, TrainResult)
    records = result.checkpoints if is_result else list(result)
    best = None
    for record in records:
        if not np.isfinite(record.score):
            continue
        if best is None or record.score > best.score:
            best = record
    if best is not None:
        return best
    if not is_result:
        if not records:
            raise InvalidInputError("no checkpoints were recorded; train with validation data")
        raise InvalidInputError("all checkpoint scores are non-finite")
    warnings.warn(
        "no usable validation checkpoint; falling back to the final parameters",
        stacklevel=2,
    )
    last_step = result.log[-1]["step"] if result.log else -1
    return CheckpointRecord(step=last_step, score=float("nan"), params=result.params)


def train(
    config: ModelConfig,
    kspec: KernelSpec,
    params: ModelParams,
    x,
    y,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    *,
    x_val=None,
    y_val=None,
) -> TrainResult:
    """Run the optimization loop and return the final state plus a log.

    Each log record carries the step index, the minibatch objective
    estimate, the learning rate, whether the step was skipped, the
    gradient norm per parameter block, wall time, and the validation score
    on checkpoint steps. Everything except the wall time is a
    deterministic function of the seed. With ``patience`` set, training
    stops early once that many validation evaluations in a row fail to
    improve on the best score.
    """
    x, y = _check_data(x, y, config)
    n = x.shape[0]
    if tcfg.batch_size is not None and tcfg.batch_size > n:
        raise ConfigError(f"batch_size {tcfg.batch_size} exceeds dataset size {n}")
    has_val = x_val is not None
    if has_val:
        if y_val is None:
            raise InvalidInputError("x_val given without y_val")
        x_val, y_val = _check_data(x_val, y_val, config)

    use_prior = _uses_noise_prior(config, tcfg.noise_prior)
    step = _step_fn(
        config, kspec, tcfg.sample_mode, use_prior, tcfg.noise_prior_a, tcfg.noise_prior_b,
        tcfg.optimize_inducing, tcfg.beta1, tcfg.beta2, tcfg.adam_eps,
    )
    val_fn = _val_score_fn(config, kspec) if has_val else None
    block_names = GRAD_BLOCKS if config.has_noise else GRAD_BLOCKS[:-1]

    opt = adam_init(params)
    log: list = []
    checkpoints: list = []
    batched = tcfg.batch_size is not None
    nb = tcfg.batch_size if batched else n
    scale_factor = jnp.asarray(n / nb)
    order: np.ndarray = np.arange(n)
    cursor = n  # forces a fresh permutation on the first batched step
    consecutive_skips = 0
    best_score = -np.inf
    stale = 0
    started = time.perf_counter()

    for t in range(tcfg.n_steps):
        if batched:
            if cursor + nb > n:
                order = rng.permutation(n)
                cursor = 0
            idx = order[cursor : cursor + nb]
            cursor += nb
            xb, yb = x[idx], y[idx]
        else:
            xb, yb = x, y
        noise = _draw_noise(rng, tcfg.n_samples, config.n_gps, nb)
        lr = tcfg.lr_at(t)
        params, opt, value, ok, gnorms = step(
            params, opt, xb, yb, noise, scale_factor, jnp.asarray(lr)
        )
        ok = bool(ok)
        consecutive_skips = 0 if ok else consecutive_skips + 1
        record = {
            "step": t,
            "elbo": float(value),
            "lr": lr,
            "skipped": not ok,
        }
        for name, gnorm in zip(block_names, gnorms):
            record[f"gnorm_{name}"] = float(gnorm)
        record["elapsed"] = time.perf_counter() - started
        is_checkpoint = has_val and ((t + 1) % tcfg.checkpoint_every == 0 or t + 1 == tcfg.n_steps)
        if is_checkpoint:
            vnoise = _draw_noise(rng, tcfg.val_samples, config.n_gps, x_val.shape[0])
            score = float(val_fn(params, x_val, y_val, vnoise))
            record["val_score"] = score
            checkpoints.append(CheckpointRecord(step=t, score=score, params=params))
            if score > best_score:
                best_score = score
                stale = 0
            else:
                stale += 1
        log.append(record)
        if consecutive_skips >= MAX_CONSECUTIVE_SKIPS:
            raise NumericalError(
                f"aborting: {consecutive_skips} consecutive non-finite steps at step {t}"
            )
        if tcfg.patience is not None and stale >= tcfg.patience:
            break

    return TrainResult(params=params, opt_state=opt, log=log, checkpoints=checkpoints)


def save_checkpoint(
    path,
    config: ModelConfig,
    kspec: KernelSpec,
    params: ModelParams,
    opt_state: Optional[AdamState] = None,
    meta: Optional[dict] = None,
) -> None:
    """Write model state to an npz file.

    Keys: ``layout`` (JSON header with variant, dimensions and kernel
    structure), ``p_*`` parameter arrays (z, mu, chol_raw, kernel_raw,
    scale_raw, noise_raw), optionally ``meta`` (free-form JSON), and when
    an optimizer state is given, ``m_*`` and ``v_*`` moment arrays with
    the same suffixes plus ``adam_step``.
    """
    arrays = {"layout": layout_header(config, kspec, int(params.state.z.shape[0]))}
    arrays.update(params_to_arrays(config, kspec, params, prefix="p_"))
    if opt_state is not None:
        arrays.update(params_to_arrays(config, kspec, opt_state.m, prefix="m_"))
        arrays.update(params_to_arrays(config, kspec, opt_state.v, prefix="v_"))
        arrays["adam_step"] = np.asarray(int(opt_state.step))
    if meta is not None:
        arrays["meta"] = np.asarray(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns (config, kspec, params, opt_state, meta); the optimizer state
    is None when the file has no moment arrays, and meta is an empty dict
    when none was stored.
    """
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    if "layout" not in arrays:
        raise ConfigError("checkpoint file has no layout header")
    config, kspec, _, m = rebuild_from_layout(str(arrays["layout"]))
    params = arrays_to_params(config, kspec, arrays, prefix="p_")
    if params.state.z.shape[0] != m:
        raise ConfigError(
            f"checkpoint layout says {m} inducing points, arrays have {params.state.z.shape[0]}"
        )
    opt_state = None
    if "adam_step" in arrays:
        opt_state = AdamState(
            m=arrays_to_params(config, kspec, arrays, prefix="m_"),
            v=arrays_to_params(config, kspec, arrays, prefix="v_"),
            step=jnp.asarray(int(arrays["adam_step"])),
        )
    meta = {}
    if "meta" in arrays:
        try:
            meta = json.loads(str(arrays["meta"]))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"checkpoint meta block is not valid JSON: {exc}") from exc
    return config, kspec, params, opt_state, meta
