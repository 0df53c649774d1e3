"""Sparse variational Gaussian process layer.

Each model carries ``G`` latent GPs that share one kernel and one set of
``M`` inducing locations ``z``. GP ``g`` keeps a free-form Gaussian over its
inducing values, N(mu_g, S_g), with S_g stored through its Cholesky factor.
Conditioning the prior on the inducing values and marginalizing gives the
induced Gaussian over function values at arbitrary inputs; samples drawn
from it via the reparameterization trick feed the likelihood terms.
"""

from __future__ import annotations

from typing import NamedTuple

import jax.numpy as jnp
import numpy as np

from .errors import InvalidInputError
from .kernels import KernelParams, KernelSpec, gram_matrix, kernel_matrix
from .linalg import chol_jitter, symmetrize, tri_solve
from .transforms import softplus, softplus_inv


class VariationalState(NamedTuple):
    """Inducing locations plus per-GP variational parameters.

    ``chol_raw`` holds unconstrained Cholesky factors: the strict lower
    triangle is used as-is and the diagonal goes through a softplus.
    """

    z: jnp.ndarray         # (M,)
    mu: jnp.ndarray        # (G, M)
    chol_raw: jnp.ndarray  # (G, M, M)


class MarginalBatch(NamedTuple):
    """Induced joint Gaussian over one batch of inputs, per GP."""

    mean: jnp.ndarray  # (G, Nx)
    cov: jnp.ndarray   # (G, Nx, Nx)
    chol: jnp.ndarray  # (G, Nx, Nx)


def state_chol(state: VariationalState) -> jnp.ndarray:
    """Constrained lower-triangular factors of the variational covariances."""
    raw = state.chol_raw
    m = raw.shape[-1]
    diag = softplus(jnp.diagonal(raw, axis1=-2, axis2=-1))
    return jnp.tril(raw, k=-1) + diag[..., :, None] * jnp.eye(m, dtype=raw.dtype)


def raw_from_chol(chol: jnp.ndarray) -> jnp.ndarray:
    """Unconstrained encoding of a lower-triangular factor with positive diagonal."""
    m = chol.shape[-1]
    diag = softplus_inv(jnp.diagonal(chol, axis1=-2, axis2=-1))
    return jnp.tril(chol, k=-1) + diag[..., :, None] * jnp.eye(m, dtype=chol.dtype)


def default_inducing(n_inducing: int, lo: float, hi: float) -> np.ndarray:
    """Equally spaced inducing locations spanning the input range."""
    if n_inducing < 1:
        raise InvalidInputError(f"need at least one inducing point, got {n_inducing}")
    if not np.isfinite([lo, hi]).all() or not hi > lo:
        raise InvalidInputError(f"invalid inducing range [{lo}, {hi}]")
    return np.linspace(lo, hi, n_inducing)


def init_state(
    spec: KernelSpec,
    kparams: KernelParams,
    z: np.ndarray,
    n_gps: int,
) -> VariationalState:
    """State whose variational distributions equal the prior p(U) exactly."""
    z = jnp.atleast_1d(jnp.asarray(z, dtype=jnp.float64))
    lz = chol_jitter(gram_matrix(spec, kparams, z))
    mu = jnp.zeros((n_gps, z.shape[0]))
    chol_raw = jnp.broadcast_to(raw_from_chol(lz), (n_gps,) + lz.shape)
    return VariationalState(z=z, mu=mu, chol_raw=chol_raw)


def _conditioning(spec, kparams, z, x):
    """Shared pieces of the inducing-point conditioning at inputs x."""
    kzz = gram_matrix(spec, kparams, z)
    lz = chol_jitter(kzz)
    kzx = kernel_matrix(spec, kparams, z, x)
    t1 = tri_solve(lz, kzx)                 # Lz^{-1} Kzx, (M, Nx)
    alpha = tri_solve(lz, t1, trans=True)   # Kzz^{-1} Kzx, (M, Nx)
    return lz, t1, alpha


def induced_marginal_core(
    spec: KernelSpec,
    kparams: KernelParams,
    state: VariationalState,
    x: jnp.ndarray,
):
    """Induced joint q(F) at inputs x. Returns the marginal and the prior factor.

    Differentiable and jit-safe; no input validation here.
    """
    x = jnp.atleast_1d(x)
    lz, t1, alpha = _conditioning(spec, kparams, state.z, x)
    kxx = gram_matrix(spec, kparams, x)
    qff = t1.T @ t1
    mean = state.mu @ alpha                              # (G, Nx)
    cfac = jnp.einsum("mn,gml->gnl", alpha, state_chol(state))
    cov = symmetrize(kxx[None] - qff[None] + cfac @ jnp.swapaxes(cfac, -1, -2))
    chol = chol_jitter(cov)
    return MarginalBatch(mean=mean, cov=cov, chol=chol), lz


def induced_marginal(
    spec: KernelSpec,
    kparams: KernelParams,
    state: VariationalState,
    x,
) -> MarginalBatch:
    """Validated wrapper around :func:`induced_marginal_core`."""
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    if x.size == 0:
        raise InvalidInputError("induced_marginal requires at least one input point")
    if not bool(jnp.all(jnp.isfinite(x))):
        raise InvalidInputError("induced_marginal inputs must be finite")
    if state.mu.shape[1] != state.z.shape[0] or state.chol_raw.shape[1:] != (
        state.z.shape[0],
        state.z.shape[0],
    ):
        raise InvalidInputError(
            f"inconsistent variational state shapes: z {state.z.shape}, "
            f"mu {state.mu.shape}, chol_raw {state.chol_raw.shape}"
        )
    marginal, _ = induced_marginal_core(spec, kparams, state, x)
    return marginal


def induced_variances(
    spec: KernelSpec,
    kparams: KernelParams,
    state: VariationalState,
    x: jnp.ndarray,
):
    """Pointwise means and variances of q(F); skips the joint factorization.

    Also returns the inducing Gram factor so callers can reuse it.
    """
    x = jnp.atleast_1d(x)
    lz, t1, alpha = _conditioning(spec, kparams, state.z, x)
    kdiag = jnp.diagonal(gram_matrix(spec, kparams, x))
    mean = state.mu @ alpha
    cfac = jnp.einsum("mn,gml->gnl", alpha, state_chol(state))
    var = kdiag[None] - jnp.sum(t1 * t1, axis=0)[None] + jnp.sum(cfac * cfac, axis=-1)
    return mean, jnp.clip(var, 1e-30, None), lz


def sample_qf(marginal: MarginalBatch, noise: jnp.ndarray) -> jnp.ndarray:
    """Reparameterized joint samples; ``noise`` has shape (..., G, Nx)."""
    return marginal.mean + jnp.einsum("gnk,...gk->...gn", marginal.chol, noise)


def sample_qf_pointwise(mean, var, noise):
    """Reparameterized samples treating every input point independently."""
    return mean + jnp.sqrt(var) * noise


def kl_qu_pu(state: VariationalState, lz: jnp.ndarray) -> jnp.ndarray:
    """Total KL(q(U) || p(U)) summed over the independent GPs.

    ``lz`` is the Cholesky factor of the inducing Gram matrix. The KL for
    one GP is the closed form between N(mu, LL^T) and N(0, Kzz).
    """
    m = state.z.shape[0]
    lq = state_chol(state)
    a = tri_solve(lz, lq)                    # (G, M, M)
    trace = jnp.sum(a * a, axis=(-1, -2))
    b = tri_solve(lz, state.mu[..., None])   # (G, M, 1)
    quad = jnp.sum(b * b, axis=(-1, -2))
    logdet_k = 2.0 * jnp.sum(jnp.log(jnp.diagonal(lz)))
    logdet_s = 2.0 * jnp.sum(jnp.log(jnp.diagonal(lq, axis1=-2, axis2=-1)), axis=-1)
    per_gp = 0.5 * (trace + quad - m + logdet_k - logdet_s)
    return jnp.sum(per_gp)
