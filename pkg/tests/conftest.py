import numpy as np
import pytest

from wishvi.gp import default_inducing
from wishvi.kernels import default_kernel, make_spec
from wishvi.likelihoods import make_model_config
from wishvi.model import init_params

#: A single fast kernel used by most tests; the composite default is
#: exercised where the composition itself is under test.
PLAIN_KERNEL = {"kind": "matern32", "variance": 1.0, "lengthscale": 0.3}


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def small_model():
    """A tiny trained-shape model: n-wp, D=2, nu=2, M=4, N=10."""
    rng = np.random.default_rng(7)
    config = make_model_config("n-wp", 2, 2)
    kspec, kparams = make_spec(PLAIN_KERNEL)
    x = np.arange(1, 11) / 10.0
    y = 0.4 * rng.standard_normal((10, 2))
    z = default_inducing(4, float(x[0]), float(x[-1]))
    params = init_params(config, kspec, kparams, z, rng)
    return config, kspec, params, x, y


@pytest.fixture
def composite_kernel():
    return default_kernel()
