import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import invgamma

from oracles import dense_covariance, dense_loglik
from wishvi.errors import ConfigError
from wishvi.likelihoods import (
    FAMILIES,
    ModelConfig,
    assemble_covariance,
    f_to_matrix,
    log_prior_noise,
    loglik,
    make_model_config,
    parse_variant,
    variant_name,
)
from wishvi.linalg import mvn_logpdf

VARIANTS = ["wp", "iwp", "n-wp", "n-iwp", "f2-wp", "f2-iwp"]


def _random_inputs(variant, d, rng, nu=None):
    config = make_model_config(variant, d, nu)
    fmat = rng.standard_normal((config.rows, config.nu))
    if config.is_factored:
        scale = rng.standard_normal((d, config.k)) / np.sqrt(config.k)
    else:
        scale = rng.uniform(0.5, 1.5, d)
    noise = rng.uniform(0.05, 0.5, d) if config.has_noise else None
    y = rng.standard_normal(d)
    return config, y, scale, noise, fmat


def test_parse_variant():
    assert parse_variant("wp") == ("wp", None)
    assert parse_variant("n-iwp") == ("n-iwp", None)
    assert parse_variant("f10-wp") == ("f-wp", 10)
    assert parse_variant("f3-iwp") == ("f-iwp", 3)
    for bad in ("gp", "f-wp", "fx-wp", "f10wp", "WP"):
        with pytest.raises(ConfigError):
            parse_variant(bad)
    with pytest.raises(ConfigError):
        parse_variant("f0-wp")


def test_make_model_config_defaults_and_validation():
    cfg = make_model_config("n-wp", 3)
    assert cfg == ModelConfig("n-wp", 3, 3, None)
    assert cfg.rows == 3 and cfg.n_gps == 9
    assert cfg.has_noise and not cfg.is_precision and not cfg.is_factored

    fac = make_model_config("f2-iwp", 5)
    assert fac.nu == 2 and fac.rows == 2 and fac.n_gps == 4
    assert fac.has_noise and fac.is_precision and fac.is_factored

    assert make_model_config("wp", 2, 4).nu == 4
    with pytest.raises(ConfigError):
        make_model_config("wp", 3, 2)  # rank-deficient without a noise floor
    with pytest.raises(ConfigError):
        make_model_config("n-wp", 0)
    with pytest.raises(ConfigError):
        make_model_config("f4-wp", 3)
    with pytest.raises(ConfigError):
        make_model_config("n-wp", 3, 0)


def test_variant_name_roundtrip():
    for name, d in [("wp", 2), ("iwp", 2), ("n-wp", 3), ("n-iwp", 3), ("f2-wp", 4), ("f3-iwp", 5)]:
        assert variant_name(make_model_config(name, d)) == name


def test_f_to_matrix_index_convention():
    cfg = make_model_config("n-wp", 3, 2)
    f = jnp.arange(cfg.n_gps, dtype=jnp.float64)
    fmat = np.asarray(f_to_matrix(cfg, f))
    for row in range(cfg.rows):
        for col in range(cfg.nu):
            assert fmat[row, col] == row * cfg.nu + col
    batched = np.asarray(f_to_matrix(cfg, jnp.tile(f, (4, 5, 1))))
    assert batched.shape == (4, 5, 3, 2)


def test_frozen_diagonal_case():
    # W = diag(1, 2) so Sigma = diag(1, 4); density written out by hand
    cfg = make_model_config("wp", 2)
    y = jnp.asarray([1.0, 1.0])
    scale = jnp.asarray([1.0, 2.0])
    fmat = jnp.eye(2)
    got = float(loglik(cfg, y, scale, None, fmat))
    assert got == pytest.approx(-3.1560242469692907, abs=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_loglik_matches_dense_oracle(variant):
    rng = np.random.default_rng(hash(variant) % 2**32)
    for d in (2, 4):
        for _ in range(5):
            config, y, scale, noise, fmat = _random_inputs(variant, d, rng)
            got = float(
                loglik(
                    config,
                    jnp.asarray(y),
                    jnp.asarray(scale),
                    None if noise is None else jnp.asarray(noise),
                    jnp.asarray(fmat),
                )
            )
            want = dense_loglik(config.family, y, scale, noise, fmat)
            assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("variant", VARIANTS)
def test_assemble_covariance_matches_oracle(variant):
    rng = np.random.default_rng(99)
    config, y, scale, noise, fmat = _random_inputs(variant, 3, rng)
    got = np.asarray(
        assemble_covariance(
            config,
            jnp.asarray(scale),
            None if noise is None else jnp.asarray(noise),
            jnp.asarray(fmat),
        )
    )
    want = dense_covariance(config.family, scale, noise, fmat)
    assert np.allclose(got, want, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("variant", VARIANTS)
def test_structured_route_agrees_with_dense_route(variant):
    rng = np.random.default_rng(7)
    config, y, scale, noise, fmat = _random_inputs(variant, 3, rng)
    scale_j = jnp.asarray(scale)
    noise_j = None if noise is None else jnp.asarray(noise)
    fmat_j = jnp.asarray(fmat)
    structured = float(loglik(config, jnp.asarray(y), scale_j, noise_j, fmat_j))
    sigma = assemble_covariance(config, scale_j, noise_j, fmat_j)
    dense = float(mvn_logpdf(jnp.asarray(y), sigma))
    assert structured == pytest.approx(dense, rel=1e-9, abs=1e-9)


def test_loglik_broadcasts_batch_dims():
    rng = np.random.default_rng(21)
    config = make_model_config("f2-wp", 4)
    fmat = jnp.asarray(rng.standard_normal((3, 5, config.rows, config.nu)))
    scale = jnp.asarray(rng.standard_normal((4, 2)))
    noise = jnp.asarray(rng.uniform(0.1, 0.3, 4))
    y = jnp.asarray(rng.standard_normal((5, 4)))
    out = loglik(config, y, scale, noise, fmat)
    assert out.shape == (3, 5)
    one = float(loglik(config, y[1], scale, noise, fmat[2, 1]))
    assert float(out[2, 1]) == pytest.approx(one, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), variant=st.sampled_from(VARIANTS))
def test_dual_route_property(seed, variant):
    rng = np.random.default_rng(seed)
    config, y, scale, noise, fmat = _random_inputs(variant, 2, rng)
    scale_j = jnp.asarray(scale)
    noise_j = None if noise is None else jnp.asarray(noise)
    structured = float(loglik(config, jnp.asarray(y), scale_j, noise_j, jnp.asarray(fmat)))
    want = dense_loglik(config.family, y, scale, noise, fmat)
    assert structured == pytest.approx(want, rel=1e-7, abs=1e-7)


def test_log_prior_noise_matches_scipy():
    lam = np.array([0.001, 0.01, 0.2])
    got = float(log_prior_noise(jnp.asarray(lam), 2.0, 0.001))
    want = invgamma.logpdf(lam, 2.0, scale=0.001).sum()
    assert got == pytest.approx(want, rel=1e-12)
    got2 = float(log_prior_noise(jnp.asarray(lam), 3.5, 0.02))
    want2 = invgamma.logpdf(lam, 3.5, scale=0.02).sum()
    assert got2 == pytest.approx(want2, rel=1e-12)


def test_families_constant_is_exhaustive():
    assert set(FAMILIES) == {"wp", "iwp", "n-wp", "n-iwp", "f-wp", "f-iwp"}
