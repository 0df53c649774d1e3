"""Cholesky-centric linear algebra with an escalating jitter policy.

Gram matrices built from smooth kernels are often positive definite only
up to rounding, so every factorization here retries with diagonal jitter
scaled to the mean diagonal: starting at ``1e-6`` of it and escalating
tenfold up to ``1e-2``. Likelihood inner matrices instead start at zero
jitter so that values are exact whenever the matrix is numerically PD.

The jitter level is chosen in a stop-gradient probe so that reverse-mode
differentiation only ever traverses one Cholesky at the selected level;
this keeps gradients finite on rescued paths.
"""

from __future__ import annotations

import jax
import jax.numpy as jnp
import numpy as np
from jax import lax

from .errors import NumericalError

# Relative jitter ladders (multiples of the mean diagonal).
GRAM_LADDER = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
EXACT_LADDER = (0.0, 1e-10, 1e-8, 1e-6)

LOG_2PI = float(np.log(2.0 * np.pi))


def symmetrize(mat):
    """Average a (batched) square matrix with its transpose."""
    return 0.5 * (mat + jnp.swapaxes(mat, -1, -2))


def chol_jitter(mat, ladder=GRAM_LADDER):
    """Lower Cholesky factor of ``mat`` (batched over leading dims).

    Tries each relative jitter level in ``ladder`` in order and factors at
    the first level where the (whole batch of) factorization(s) is finite.
    If every level fails the returned factor contains NaNs; callers that
    need a hard failure should go through :func:`chol_or_raise`.
    """
    n = mat.shape[-1]
    eye = jnp.eye(n, dtype=mat.dtype)
    probe = lax.stop_gradient(mat)
    diag_mean = jnp.mean(jnp.diagonal(probe, axis1=-2, axis2=-1))
    scale = jnp.where(diag_mean > 0.0, diag_mean, 1.0)

    def _ok(rel):
        return jnp.all(jnp.isfinite(jnp.linalg.cholesky(probe + (rel * scale) * eye)))

    eps = ladder[0] * scale
    ok = _ok(ladder[0])
    for rel in ladder[1:]:
        eps, ok = lax.cond(
            ok,
            lambda e, o: (e, o),
            lambda e, o: (rel * scale, _ok(rel)),  # noqa: B023 - rel is bound per unrolled level
            eps,
            ok,
        )
    return jnp.linalg.cholesky(mat + lax.stop_gradient(eps) * eye)


def chol_or_raise(mat, ladder=GRAM_LADDER, what="matrix"):
    """Eager :func:`chol_jitter` that raises once the ladder is exhausted."""
    chol = chol_jitter(jnp.asarray(mat), ladder)
    if not bool(jnp.all(jnp.isfinite(chol))):
        raise NumericalError(
            f"Cholesky factorization of {what} failed after jitter escalation "
            f"up to {ladder[-1]:g} of the mean diagonal"
        )
    return chol


def tri_solve(chol, rhs, *, lower=True, trans=False):
    """Triangular solve broadcasting the batch dims of both arguments.

    ``rhs`` must be in matrix form; wrap vectors as ``v[..., None]``.
    """
    batch = jnp.broadcast_shapes(chol.shape[:-2], rhs.shape[:-2])
    chol = jnp.broadcast_to(chol, batch + chol.shape[-2:])
    rhs = jnp.broadcast_to(rhs, batch + rhs.shape[-2:])
    return jax.scipy.linalg.solve_triangular(chol, rhs, lower=lower, trans=1 if trans else 0)


def chol_solve(chol, rhs):
    """Solve ``(L L^T) x = rhs`` given the lower factor ``L``."""
    return tri_solve(chol, tri_solve(chol, rhs, lower=True), lower=True, trans=True)


def chol_logdet(chol):
    """Log-determinant of ``L L^T`` from its lower factor (batched)."""
    return 2.0 * jnp.sum(jnp.log(jnp.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


def mvn_logpdf_chol(y, chol):
    """Mean-zero Gaussian log-density given the covariance Cholesky factor."""
    alpha = tri_solve(chol, y[..., None])
    dim = y.shape[-1]
    quad = jnp.sum(alpha * alpha, axis=(-1, -2))
    return -0.5 * (dim * LOG_2PI + chol_logdet(chol) + quad)


def mvn_logpdf(y, cov, ladder=EXACT_LADDER):
    """Mean-zero Gaussian log-density of ``y`` under covariance ``cov``."""
    return mvn_logpdf_chol(y, chol_jitter(cov, ladder))
