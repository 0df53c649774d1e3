"""Trainable parameter container tying the GP layer to a likelihood variant.

``ModelParams`` is a JAX pytree holding everything the optimizer touches:
the variational state, unconstrained kernel parameters, the scale matrix A
(diagonal variants store a positive vector through a softplus, factored
variants store the dense D x K matrix directly), and the optional noise
diagonal. Checkpoint serialization to plain arrays lives here too.
"""

from __future__ import annotations

import json
from typing import NamedTuple, Optional

import jax.numpy as jnp
import numpy as np

from .errors import ConfigError, InvalidInputError
from .gp import VariationalState, init_state
from .kernels import (
    KernelParams,
    KernelSpec,
    flatten_raw,
    make_spec,
    spec_structure,
    unflatten_raw,
)
from .likelihoods import ModelConfig, make_model_config, variant_name
from .transforms import softplus, softplus_inv_np


class ModelParams(NamedTuple):
    state: VariationalState
    kernel: KernelParams
    scale_raw: jnp.ndarray                 # (D,) diagonal or (D, K) factored
    noise_raw: Optional[jnp.ndarray]       # (D,) or None


def constrained_scale(config: ModelConfig, params: ModelParams) -> jnp.ndarray:
    """Scale matrix in model space: positive diagonal or free dense factor."""
    if config.is_factored:
        return params.scale_raw
    return softplus(params.scale_raw)


def constrained_noise(config: ModelConfig, params: ModelParams):
    if params.noise_raw is None:
        return None
    return softplus(params.noise_raw)


def init_params(
    config: ModelConfig,
    kspec: KernelSpec,
    kparams: KernelParams,
    z: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    scale_init: float = 1.0,
    noise_init: float = 1e-3,
) -> ModelParams:
    """Fresh parameters: variational state at the prior, scale and noise at
    their configured starting values.

    Factored variants draw A entries from N(0, 1/K) and need ``rng``.
    """
    state = init_state(kspec, kparams, z, config.n_gps)
    if config.is_factored:
        if rng is None:
            raise InvalidInputError("factored variants need an rng to initialize A")
        scale_raw = jnp.asarray(
            rng.standard_normal((config.d, config.k)) / np.sqrt(config.k)
        )
    else:
        if not scale_init > 0.0:
            raise InvalidInputError(f"scale_init must be positive, got {scale_init}")
        scale_raw = jnp.full((config.d,), float(softplus_inv_np(scale_init)))
    if config.has_noise:
        if not noise_init > 0.0:
            raise InvalidInputError(f"noise_init must be positive, got {noise_init}")
        noise_raw = jnp.full((config.d,), float(softplus_inv_np(noise_init)))
    else:
        noise_raw = None
    return ModelParams(state=state, kernel=kparams, scale_raw=scale_raw, noise_raw=noise_raw)


def _layout(config: ModelConfig, kspec: KernelSpec, n_inducing: int) -> str:
    return json.dumps(
        {
            "variant": variant_name(config),
            "d": config.d,
            "nu": config.nu,
            "m": n_inducing,
            "kernel": spec_structure(kspec),
        },
        sort_keys=True,
    )


def params_to_arrays(
    config: ModelConfig, kspec: KernelSpec, params: ModelParams, prefix: str = ""
) -> dict:
    """Flatten a params pytree into named float64 arrays for an npz file."""
    noise = params.noise_raw
    return {
        prefix + "z": np.asarray(params.state.z),
        prefix + "mu": np.asarray(params.state.mu),
        prefix + "chol_raw": np.asarray(params.state.chol_raw),
        prefix + "kernel_raw": flatten_raw(kspec, params.kernel),
        prefix + "scale_raw": np.asarray(params.scale_raw),
        prefix + "noise_raw": np.zeros((0,)) if noise is None else np.asarray(noise),
    }


def arrays_to_params(
    config: ModelConfig, kspec: KernelSpec, arrays, prefix: str = ""
) -> ModelParams:
    """Inverse of :func:`params_to_arrays`."""
    def get(name):
        key = prefix + name
        if key not in arrays:
            raise InvalidInputError(f"checkpoint is missing array {key!r}")
        return jnp.asarray(arrays[key], dtype=jnp.float64)

    noise = get("noise_raw")
    return ModelParams(
        state=VariationalState(z=get("z"), mu=get("mu"), chol_raw=get("chol_raw")),
        kernel=unflatten_raw(kspec, np.asarray(arrays[prefix + "kernel_raw"])),
        scale_raw=get("scale_raw"),
        noise_raw=None if noise.size == 0 else noise,
    )


def rebuild_from_layout(layout_json: str):
    """Turn a checkpoint layout header back into (config, spec, template params).

    The kernel parameter values in the returned tuple are defaults; callers
    overwrite them from the stored arrays.
    """
    try:
        layout = json.loads(layout_json)
        variant = layout["variant"]
        d, nu, m = int(layout["d"]), int(layout["nu"]), int(layout["m"])
        kernel_tree = layout["kernel"]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed checkpoint layout: {exc}") from exc
    config = make_model_config(variant, d, nu)
    kspec, kparams = make_spec(kernel_tree)
    return config, kspec, kparams, m


def layout_header(config: ModelConfig, kspec: KernelSpec, n_inducing: int) -> np.ndarray:
    """Layout JSON wrapped as a numpy scalar so it can live in an npz file."""
    return np.asarray(_layout(config, kspec, n_inducing))
