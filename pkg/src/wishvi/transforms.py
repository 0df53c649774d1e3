"""Positivity transform between unconstrained and constrained parameters.

All positive hyperparameters (kernel scales, noise variances, Cholesky
diagonals) are stored unconstrained and mapped through a softplus, which
keeps optimization unconstrained while guaranteeing strict positivity.
"""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np


def softplus(raw):
    """Map unconstrained values to strictly positive ones, overflow-safe."""
    return jnp.logaddexp(0.0, raw)


def softplus_inv(value):
    """Inverse of :func:`softplus`; requires strictly positive input.

    Uses ``v + log1p(-exp(-v))``, which is stable for both large and small
    positive values.
    """
    value = jnp.asarray(value)
    return value + jnp.log(-jnp.expm1(-value))


def softplus_inv_np(value):
    """NumPy variant of :func:`softplus_inv` for eager initialization code."""
    value = np.asarray(value, dtype=float)
    return value + np.log(-np.expm1(-value))
