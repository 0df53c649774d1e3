"""Observation likelihoods for covariance process models.

Every variant maps a matrix of latent GP values F (``rows`` x ``nu``) to a
zero-mean Gaussian over the observation y via a rank construction:

- ``wp``      covariance Sigma = A F F^T A^T, A diagonal
- ``iwp``     precision  Omega = A F F^T A^T, A diagonal
- ``n-wp``    covariance Sigma = A F F^T A^T + Lambda
- ``n-iwp``   precision  Omega = A F F^T A^T + Lambda^{-1}
- ``f-wp``    covariance Sigma = A F F^T A^T + Lambda, A dense (D x K)
- ``f-iwp``   precision  Omega = A F F^T A^T + Lambda^{-1}, A dense (D x K)

Lambda is a diagonal noise matrix. The factored variants never materialize
the D x D matrix inside the likelihood: rank-K structure plus the matrix
determinant lemma and the Woodbury identity keep the cost at O(D K^2) per
evaluation. The dense assembly route exists separately for forecasting and
for cross-checking the structured route; the two are kept independent on
purpose.
"""

from __future__ import annotations

import re
from typing import NamedTuple, Optional

import jax.numpy as jnp
from jax.scipy.special import gammaln

from .errors import ConfigError
from .linalg import (
    EXACT_LADDER,
    LOG_2PI,
    chol_jitter,
    chol_logdet,
    chol_solve,
    symmetrize,
    tri_solve,
)

FAMILIES = ("wp", "iwp", "n-wp", "n-iwp", "f-wp", "f-iwp")
NOISE_FAMILIES = ("n-wp", "n-iwp", "f-wp", "f-iwp")
PRECISION_FAMILIES = ("iwp", "n-iwp", "f-iwp")
FACTORED_FAMILIES = ("f-wp", "f-iwp")

_VARIANT_RE = re.compile(r"^f(\d+)-(wp|iwp)$")


class ModelConfig(NamedTuple):
    """Static description of one likelihood variant.

    ``d`` is the observation dimension, ``nu`` the degrees of freedom, and
    ``k`` the number of factor rows (None outside the factored variants).
    """

    family: str
    d: int
    nu: int
    k: Optional[int] = None

    @property
    def rows(self) -> int:
        return self.k if self.k is not None else self.d

    @property
    def n_gps(self) -> int:
        return self.rows * self.nu

    @property
    def has_noise(self) -> bool:
        return self.family in NOISE_FAMILIES

    @property
    def is_precision(self) -> bool:
        return self.family in PRECISION_FAMILIES

    @property
    def is_factored(self) -> bool:
        return self.family in FACTORED_FAMILIES


def parse_variant(name: str) -> tuple[str, Optional[int]]:
    """Split a variant name like ``"n-wp"`` or ``"f10-iwp"`` into (family, k)."""
    if name in ("wp", "iwp", "n-wp", "n-iwp"):
        return name, None
    match = _VARIANT_RE.match(name)
    if match:
        k = int(match.group(1))
        if k < 1:
            raise ConfigError(f"factor count in variant '{name}' must be positive")
        return f"f-{match.group(2)}", k
    raise ConfigError(
        f"unknown model variant {name!r}; expected wp, iwp, n-wp, n-iwp, f<K>-wp or f<K>-iwp"
    )


def make_model_config(variant: str, d: int, nu: Optional[int] = None) -> ModelConfig:
    """Validated config; ``nu`` defaults to the rank of the construction."""
    family, k = parse_variant(variant)
    if d < 1:
        raise ConfigError(f"dimension must be positive, got {d}")
    if k is not None and k > d:
        raise ConfigError(f"factor count {k} exceeds dimension {d}")
    rows = k if k is not None else d
    if nu is None:
        nu = rows
    if nu < 1:
        raise ConfigError(f"degrees of freedom must be positive, got {nu}")
    if family in ("wp", "iwp") and nu < d:
        # no noise floor in these variants, so rank nu < d means a singular
        # covariance with probability one
        raise ConfigError(f"variant '{family}' needs nu >= d, got nu={nu} < d={d}")
    return ModelConfig(family=family, d=d, nu=nu, k=k)


def variant_name(config: ModelConfig) -> str:
    if config.is_factored:
        return f"f{config.k}-{config.family.split('-', 1)[1]}"
    return config.family


def f_to_matrix(config: ModelConfig, f: jnp.ndarray) -> jnp.ndarray:
    """Reshape flat GP values (..., rows*nu) into matrices (..., rows, nu).

    GP index g maps to row g // nu and column g % nu.
    """
    return f.reshape(f.shape[:-1] + (config.rows, config.nu))


def _diag_factor(a, fmat):
    """W = diag(a) F for the diagonal-scale variants."""
    return a[..., :, None] * fmat


def loglik_wp(y, a, fmat):
    """log N(y; 0, W W^T) with W = diag(a) F."""
    w = _diag_factor(a, fmat)
    sigma = symmetrize(w @ jnp.swapaxes(w, -1, -2))
    chol = chol_jitter(sigma, EXACT_LADDER)
    alpha = tri_solve(chol, y[..., None])
    quad = jnp.sum(alpha * alpha, axis=(-1, -2))
    d = y.shape[-1]
    return -0.5 * (d * LOG_2PI + chol_logdet(chol) + quad)


def loglik_iwp(y, a, fmat):
    """log N(y; 0, Omega^{-1}) with precision Omega = W W^T."""
    w = _diag_factor(a, fmat)
    omega = symmetrize(w @ jnp.swapaxes(w, -1, -2))
    chol = chol_jitter(omega, EXACT_LADDER)
    wy = jnp.swapaxes(w, -1, -2) @ y[..., None]
    quad = jnp.sum(wy * wy, axis=(-1, -2))
    d = y.shape[-1]
    return -0.5 * (d * LOG_2PI - chol_logdet(chol) + quad)


def loglik_nwp(y, a, lam, fmat):
    """log N(y; 0, W W^T + diag(lam))."""
    w = _diag_factor(a, fmat)
    sigma = symmetrize(w @ jnp.swapaxes(w, -1, -2))
    sigma = sigma + lam[..., None] * jnp.eye(y.shape[-1], dtype=sigma.dtype)
    chol = chol_jitter(sigma, EXACT_LADDER)
    alpha = tri_solve(chol, y[..., None])
    quad = jnp.sum(alpha * alpha, axis=(-1, -2))
    d = y.shape[-1]
    return -0.5 * (d * LOG_2PI + chol_logdet(chol) + quad)


def loglik_niwp(y, a, lam, fmat):
    """log N(y; 0, Omega^{-1}) with Omega = W W^T + diag(lam)^{-1}."""
    w = _diag_factor(a, fmat)
    omega = symmetrize(w @ jnp.swapaxes(w, -1, -2))
    omega = omega + (1.0 / lam)[..., None] * jnp.eye(y.shape[-1], dtype=omega.dtype)
    chol = chol_jitter(omega, EXACT_LADDER)
    qy = omega @ y[..., None]
    quad = jnp.sum(y[..., None] * qy, axis=(-1, -2))
    d = y.shape[-1]
    return -0.5 * (d * LOG_2PI - chol_logdet(chol) + quad)


def loglik_fwp(y, a, lam, fmat):
    """Low-rank plus diagonal covariance, evaluated without the D x D matrix.

    Sigma = W W^T + diag(lam) with W = A F of shape (..., D, nu). The log
    determinant uses the matrix determinant lemma and the quadratic form
    uses the Woodbury identity, both through the nu x nu capacitance
    C = I + W^T diag(lam)^{-1} W.
    """
    w = a @ fmat
    nu = w.shape[-1]
    wl = w / lam[..., :, None]
    cap = jnp.eye(nu, dtype=w.dtype) + symmetrize(jnp.swapaxes(w, -1, -2) @ wl)
    chol = chol_jitter(cap, EXACT_LADDER)
    logdet = jnp.sum(jnp.log(lam), axis=-1) + chol_logdet(chol)
    v = jnp.swapaxes(wl, -1, -2) @ y[..., None]              # W^T Lambda^{-1} y
    alpha = tri_solve(chol, v)
    quad = jnp.sum(y * y / lam, axis=-1) - jnp.sum(alpha * alpha, axis=(-1, -2))
    d = y.shape[-1]
    return -0.5 * (d * LOG_2PI + logdet + quad)


def loglik_fiwp(y, a, lam, fmat):
    """Low-rank plus diagonal precision, evaluated without the D x D matrix.

    Omega = W W^T + diag(lam)^{-1} with W = A F. The quadratic form expands
    directly and the log determinant uses the determinant lemma with
    capacitance C = I + W^T diag(lam) W.
    """
    w = a @ fmat
    nu = w.shape[-1]
    cap = jnp.eye(nu, dtype=w.dtype) + symmetrize(
        jnp.swapaxes(w, -1, -2) @ (lam[..., :, None] * w)
    )
    chol = chol_jitter(cap, EXACT_LADDER)
    logdet = -jnp.sum(jnp.log(lam), axis=-1) + chol_logdet(chol)
    wy = jnp.swapaxes(w, -1, -2) @ y[..., None]
    quad = jnp.sum(y * y / lam, axis=-1) + jnp.sum(wy * wy, axis=(-1, -2))
    d = y.shape[-1]
    return -0.5 * (d * LOG_2PI - logdet + quad)


def loglik(config: ModelConfig, y, scale, noise, fmat):
    """Dispatch to the structured likelihood of the configured variant.

    ``scale`` is (D,) for diagonal variants or (D, K) for factored ones;
    ``noise`` is the diagonal of Lambda or None where the variant has no
    noise term. All arrays may carry matching leading batch dimensions.
    """
    family = config.family
    if family == "wp":
        return loglik_wp(y, scale, fmat)
    if family == "iwp":
        return loglik_iwp(y, scale, fmat)
    if family == "n-wp":
        return loglik_nwp(y, scale, noise, fmat)
    if family == "n-iwp":
        return loglik_niwp(y, scale, noise, fmat)
    if family == "f-wp":
        return loglik_fwp(y, scale, noise, fmat)
    if family == "f-iwp":
        return loglik_fiwp(y, scale, noise, fmat)
    raise ConfigError(f"unknown family {family!r}")


def assemble_covariance(config: ModelConfig, scale, noise, fmat):
    """Dense D x D observation covariance implied by one latent draw.

    Precision-side variants are inverted here. This is the reference and
    forecasting route; the training likelihood never calls it.
    """
    if config.is_factored:
        w = scale @ fmat
    else:
        w = _diag_factor(scale, fmat)
    gram = symmetrize(w @ jnp.swapaxes(w, -1, -2))
    eye = jnp.eye(config.d, dtype=gram.dtype)
    if config.family in ("wp", "n-wp", "f-wp"):
        sigma = gram
        if config.has_noise:
            sigma = sigma + noise[..., None] * eye
        return sigma
    omega = gram
    if config.has_noise:
        omega = omega + (1.0 / noise)[..., None] * eye
    chol = chol_jitter(omega, EXACT_LADDER)
    return symmetrize(chol_solve(chol, jnp.broadcast_to(eye, omega.shape)))


def log_prior_noise(lam, prior_a: float = 2.0, prior_b: float = 0.001):
    """Inverse-gamma log density summed over the noise diagonal.

    Used as a regularizing prior when the noise of the precision-side
    variants is learned by MAP.
    """
    return jnp.sum(
        prior_a * jnp.log(prior_b)
        - gammaln(prior_a)
        - (prior_a + 1.0) * jnp.log(lam)
        - prior_b / lam
    )
