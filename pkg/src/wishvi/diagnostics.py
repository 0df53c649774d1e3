"""Synthetic data generation and the gradient-variance demonstration.

The demonstration isolates a known failure mode of black-box variational
inference for the noiseless Wishart construction: single-sample gradients
of the conditional log-likelihood with respect to the latent matrix
entries have enormous variance, because sampled F matrices land near
singularity and the likelihood inverts A F F^T A^T. Adding a small
diagonal noise term to the covariance removes the blow-up. Both gradient
populations here are computed from the same latent draws, so the contrast
is paired rather than run-to-run.
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvalidInputError
from .gp import induced_marginal, init_state, sample_qf
from .kernels import default_kernel
from .likelihoods import f_to_matrix, loglik, make_model_config

#: Constant covariance of the demonstration's simulated bivariate series.
DEMO_SIGMA = ((2.0, 1.9), (1.9, 2.0))


class SyntheticSpec(NamedTuple):
    """Recipe for a smoothly varying synthetic covariance path.

    The path is Sigma(t) = B(t) B(t)^T + floor * I where every entry of
    the (d x d) loading matrix B(t) is a sinusoid with random phase, so
    the covariance moves slowly and stays well conditioned.
    """

    n: int
    d: int
    amplitude: float = 1.0
    frequency: float = 2.0    # sinusoid cycles over the unit interval
    floor: float = 0.05


class SyntheticData(NamedTuple):
    x: np.ndarray             # (N,) inputs in (0, 1]
    y: np.ndarray             # (N, D) draws from N(0, Sigma(x))
    covariances: np.ndarray   # (N, D, D) the true path


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> SyntheticData:
    """Simulate observations from a slowly rotating covariance path."""
    if spec.n < 1 or spec.d < 1:
        raise InvalidInputError(f"invalid synthetic size: n={spec.n}, d={spec.d}")
    if not (spec.amplitude > 0.0 and spec.frequency > 0.0 and spec.floor > 0.0):
        raise InvalidInputError("amplitude, frequency and floor must be positive")
    x = np.arange(1, spec.n + 1, dtype=np.float64) / spec.n
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(spec.d, spec.d))
    speed = rng.uniform(0.5, 1.0, size=(spec.d, spec.d)) * spec.frequency
    angle = 2.0 * np.pi * speed[None] * x[:, None, None] + phase[None]
    loadings = spec.amplitude / np.sqrt(spec.d) * np.sin(angle)        # (N, D, D)
    covs = loadings @ np.swapaxes(loadings, -1, -2)
    covs += spec.floor * np.eye(spec.d)[None]
    chols = np.linalg.cholesky(covs)
    draws = rng.standard_normal((spec.n, spec.d))
    y = np.einsum("nij,nj->ni", chols, draws)
    return SyntheticData(x=x, y=y, covariances=covs)


class GradientVarianceResult(NamedTuple):
    """Paired single-coordinate gradient statistics for the two variants."""

    wp_mean: float
    wp_std: float
    noisy_mean: float
    noisy_std: float
    wp_samples: np.ndarray
    noisy_samples: np.ndarray
    noise: float
    coordinate: tuple


def gradient_variance_experiment(
    rng: np.random.Generator,
    *,
    n_points: int = 30,
    n_inducing: int = 10,
    n_draws: int = 1000,
    noise: float = 0.01,
    sigma0=DEMO_SIGMA,
    coordinate: tuple = (0, 0, 0),
) -> GradientVarianceResult:
    """Sample gradients of log p(Y_n | F_n) w.r.t. one latent entry.

    A bivariate series with constant covariance ``sigma0`` is simulated at
    uniform random inputs, the variational distribution is left at the GP
    prior, and ``n_draws`` joint samples of F are taken. For every draw
    the gradient of the summed conditional log-likelihood with respect to
    F is evaluated twice from the same draw: once under the noiseless
    covariance construction and once with ``noise`` added to the diagonal.
    ``coordinate`` picks the reported entry as (row, column, point),
    zero-based.
    """
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    d = sigma0.shape[0]
    if sigma0.shape != (d, d) or not np.allclose(sigma0, sigma0.T):
        raise InvalidInputError(f"sigma0 must be a symmetric square matrix, got {sigma0.shape}")
    if n_draws < 2:
        raise InvalidInputError(f"need at least two draws, got {n_draws}")
    if not noise > 0.0:
        raise InvalidInputError(f"noise must be positive, got {noise}")
    row, col, point = coordinate
    config = make_model_config("wp", d)
    noisy_config = make_model_config("n-wp", d)
    if not (0 <= row < d and 0 <= col < config.nu and 0 <= point < n_points):
        raise InvalidInputError(f"coordinate {coordinate} out of range")

    x = rng.uniform(0.0, 1.0, size=n_points)
    z = rng.uniform(0.0, 1.0, size=n_inducing)
    y = rng.multivariate_normal(np.zeros(d), sigma0, size=n_points)

    kspec, kparams = default_kernel()
    state = init_state(kspec, kparams, z, config.n_gps)
    marginal = induced_marginal(kspec, kparams, state, x)
    draws = jnp.asarray(rng.standard_normal((n_draws, config.n_gps, n_points)))
    f = sample_qf(marginal, draws)                       # (R, G, N)

    ones = jnp.ones(d)
    lam = jnp.full(d, noise)
    yj = jnp.asarray(y)

    def total_loglik(f_single, cfg, lam_or_none):
        fmat = f_to_matrix(cfg, f_single.T)              # (N, d, nu)
        return jnp.sum(loglik(cfg, yj, ones, lam_or_none, fmat))

    grad_wp = jax.jit(jax.vmap(jax.grad(lambda fs: total_loglik(fs, config, None))))
    grad_noisy = jax.jit(jax.vmap(jax.grad(lambda fs: total_loglik(fs, noisy_config, lam))))

    g = row * config.nu + col
    wp_samples = np.asarray(grad_wp(f)[:, g, point])
    noisy_samples = np.asarray(grad_noisy(f)[:, g, point])
    return GradientVarianceResult(
        wp_mean=float(wp_samples.mean()),
        wp_std=float(wp_samples.std()),
        noisy_mean=float(noisy_samples.mean()),
        noisy_std=float(noisy_samples.std()),
        wp_samples=wp_samples,
        noisy_samples=noisy_samples,
        noise=float(noise),
        coordinate=(row, col, point),
    )


__all__ = [
    "DEMO_SIGMA",
    "GradientVarianceResult",
    "SyntheticData",
    "SyntheticSpec",
    "generate_synthetic",
    "gradient_variance_experiment",
]
