"""Independent reference implementations used to check package code.

Everything here is computed with numpy and scipy only, from the model
definitions directly, so agreement with the package is a genuine
cross-check rather than the same code called twice.
"""

import numpy as np
from scipy.stats import multivariate_normal


def dense_covariance(family, scale, lam, fmat):
    """Observation covariance of one latent draw, built the obvious way."""
    scale = np.asarray(scale, dtype=np.float64)
    fmat = np.asarray(fmat, dtype=np.float64)
    w = scale @ fmat if scale.ndim == 2 else scale[:, None] * fmat
    gram = w @ w.T
    d = gram.shape[0]
    if family in ("wp", "n-wp", "f-wp"):
        sigma = gram
        if lam is not None:
            sigma = sigma + np.diag(np.asarray(lam, dtype=np.float64))
        return sigma
    omega = gram
    if lam is not None:
        omega = omega + np.diag(1.0 / np.asarray(lam, dtype=np.float64))
    return np.linalg.inv(omega)


def dense_loglik(family, y, scale, lam, fmat):
    """Gaussian log-density of y under the densely assembled covariance."""
    y = np.asarray(y, dtype=np.float64)
    sigma = dense_covariance(family, scale, lam, fmat)
    return multivariate_normal.logpdf(y, mean=np.zeros(y.shape[-1]), cov=sigma)


def gp_conditional(kzz, kzx, kxx, mu, s):
    """Marginal of int p(f | u) q(u) du for one GP, by direct linear algebra."""
    kzz_inv = np.linalg.inv(kzz)
    a = kzx.T @ kzz_inv                       # (Nx, M)
    mean = a @ mu
    cov = kxx - a @ kzx + a @ s @ a.T
    return mean, cov


def gaussian_kl(mu0, cov0, cov1):
    """KL( N(mu0, cov0) || N(0, cov1) ) in closed form."""
    m = mu0.shape[0]
    cov1_inv = np.linalg.inv(cov1)
    trace = np.trace(cov1_inv @ cov0)
    quad = mu0 @ cov1_inv @ mu0
    _, logdet0 = np.linalg.slogdet(cov0)
    _, logdet1 = np.linalg.slogdet(cov1)
    return 0.5 * (trace + quad - m + logdet1 - logdet0)


def fd_gradients(value_fn, params, h=1e-5):
    """Central finite differences over every coordinate of a pytree.

    Fresh buffers are used for each evaluation; jax can alias numpy memory
    on CPU, so a buffer must never be mutated after being handed over.
    """
    import jax

    leaves, treedef = jax.tree.flatten(params)
    grads = []
    for li, leaf in enumerate(leaves):
        flat = np.asarray(leaf, dtype=np.float64).ravel()
        grad = np.zeros_like(flat)
        for idx in range(flat.size):
            plus_flat = flat.copy()
            plus_flat[idx] += h
            minus_flat = flat.copy()
            minus_flat[idx] -= h
            plus = jax.tree.unflatten(
                treedef, leaves[:li] + [plus_flat.reshape(np.shape(leaf))] + leaves[li + 1:]
            )
            minus = jax.tree.unflatten(
                treedef, leaves[:li] + [minus_flat.reshape(np.shape(leaf))] + leaves[li + 1:]
            )
            grad[idx] = (float(value_fn(plus)) - float(value_fn(minus))) / (2.0 * h)
        grads.append(grad.reshape(np.shape(leaf)))
    return jax.tree.unflatten(treedef, grads)


def max_rel_error(approx, exact, floor=1.0):
    """Worst relative disagreement across two gradient pytrees."""
    import jax

    worst = 0.0
    for a, b in zip(jax.tree.leaves(approx), jax.tree.leaves(exact)):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float((np.abs(a - b) / scale).max()))
    return worst
