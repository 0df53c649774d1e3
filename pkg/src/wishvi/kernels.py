"""Compositional covariance kernels on scalar (time) inputs.

A kernel is an expression tree whose leaves are one of four stationary
primitives and whose internal nodes add or multiply their children. Each
leaf owns a slot in a parallel tuple of parameter dictionaries; all values
are stored unconstrained and pushed through a softplus on evaluation.

The default composition is a Matern 3/2 plus a rational quadratic plus a
radial basis function plus a periodic component expressed as the product
of a periodic kernel and a radial basis function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import jax.numpy as jnp
import numpy as np

from .errors import ConfigError, InvalidInputError
from .linalg import symmetrize
from .transforms import softplus, softplus_inv_np

#: Parameter names required by each primitive, in canonical order.
PRIMITIVE_PARAMS = {
    "matern32": ("variance", "lengthscale"),
    "rbf": ("variance", "lengthscale"),
    "rational_quadratic": ("variance", "lengthscale", "alpha"),
    "periodic": ("variance", "lengthscale", "period"),
}

#: Initial constrained values used when a config omits a parameter.
DEFAULT_PARAM_VALUES = {
    "variance": 1.0,
    "lengthscale": 0.2,
    "alpha": 1.0,
    "period": 0.5,
}


@dataclass(frozen=True)
class Leaf:
    kind: str
    index: int


@dataclass(frozen=True)
class Sum:
    terms: tuple


@dataclass(frozen=True)
class Product:
    terms: tuple


KernelNode = Union[Leaf, Sum, Product]


@dataclass(frozen=True)
class KernelSpec:
    """Static kernel expression tree; hashable, so safe as a jit constant."""

    root: KernelNode
    leaf_kinds: tuple

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_kinds)


#: KernelParams is a tuple of per-leaf dicts of unconstrained scalars,
#: ordered to match ``KernelSpec.leaf_kinds``. It is a JAX pytree.
KernelParams = tuple


def _matern32(p, r):
    z = (math.sqrt(3.0) / softplus(p["lengthscale"])) * r
    return softplus(p["variance"]) * (1.0 + z) * jnp.exp(-z)


def _rbf(p, r):
    z = r / softplus(p["lengthscale"])
    return softplus(p["variance"]) * jnp.exp(-0.5 * z * z)


def _rational_quadratic(p, r):
    ell = softplus(p["lengthscale"])
    alpha = softplus(p["alpha"])
    base = 1.0 + (r * r) / (2.0 * alpha * ell * ell)
    return softplus(p["variance"]) * base ** (-alpha)


def _periodic(p, r):
    ell = softplus(p["lengthscale"])
    s = jnp.sin((math.pi / softplus(p["period"])) * r)
    return softplus(p["variance"]) * jnp.exp(-2.0 * (s * s) / (ell * ell))


_PRIMITIVE_FNS = {
    "matern32": _matern32,
    "rbf": _rbf,
    "rational_quadratic": _rational_quadratic,
    "periodic": _periodic,
}


def _eval_node(node: KernelNode, params: KernelParams, r):
    if isinstance(node, Leaf):
        return _PRIMITIVE_FNS[node.kind](params[node.index], r)
    parts = [_eval_node(t, params, r) for t in node.terms]
    out = parts[0]
    for part in parts[1:]:
        out = out + part if isinstance(node, Sum) else out * part
    return out


def validate_params(spec: KernelSpec, params: KernelParams) -> None:
    """Check that ``params`` matches the spec's leaves, slot by slot."""
    if len(params) != spec.n_leaves:
        raise InvalidInputError(
            f"kernel expects {spec.n_leaves} parameter slots, got {len(params)}"
        )
    for i, kind in enumerate(spec.leaf_kinds):
        expected = set(PRIMITIVE_PARAMS[kind])
        got = set(params[i])
        if got != expected:
            raise InvalidInputError(
                f"leaf {i} ({kind}) expects parameters {sorted(expected)}, got {sorted(got)}"
            )


def eval_kernel(spec: KernelSpec, params: KernelParams, x1, x2):
    """Evaluate the kernel at a pair of scalar inputs."""
    validate_params(spec, params)
    x1 = jnp.asarray(x1, dtype=jnp.float64)
    x2 = jnp.asarray(x2, dtype=jnp.float64)
    if not bool(jnp.isfinite(x1)) or not bool(jnp.isfinite(x2)):
        raise InvalidInputError("kernel inputs must be finite")
    return _eval_node(spec.root, params, jnp.abs(x1 - x2))


def kernel_matrix(spec: KernelSpec, params: KernelParams, xa, xb):
    """Cross-covariance matrix between two point sets (shape |xa| x |xb|)."""
    xa = jnp.atleast_1d(jnp.asarray(xa, dtype=jnp.float64))
    xb = jnp.atleast_1d(jnp.asarray(xb, dtype=jnp.float64))
    if xa.size == 0 or xb.size == 0:
        raise InvalidInputError("kernel_matrix requires non-empty point sets")
    r = jnp.abs(xa[:, None] - xb[None, :])
    return _eval_node(spec.root, params, r)


def gram_matrix(spec: KernelSpec, params: KernelParams, x):
    """Symmetrized Gram matrix of one point set."""
    return symmetrize(kernel_matrix(spec, params, x, x))


def constrained(params: KernelParams) -> tuple:
    """Constrained (positive) view of the unconstrained parameter slots."""
    return tuple({k: float(softplus(v)) for k, v in slot.items()} for slot in params)


def _leaf_params_from_config(kind: str, entry: dict) -> dict:
    values = {}
    for name in PRIMITIVE_PARAMS[kind]:
        value = entry.get(name, DEFAULT_PARAM_VALUES[name])
        value = float(value)
        if not value > 0.0:
            raise ConfigError(f"kernel parameter '{name}' of '{kind}' must be positive, got {value}")
        values[name] = jnp.asarray(float(softplus_inv_np(value)))
    extra = set(entry) - set(PRIMITIVE_PARAMS[kind]) - {"kind"}
    if extra:
        raise ConfigError(f"kernel leaf '{kind}' has unknown parameters {sorted(extra)}")
    return values


def make_spec(tree) -> tuple[KernelSpec, KernelParams]:
    """Build a kernel from its nested-config form.

    The config form is either a leaf ``{"kind": <name>, <param>: <value>, ...}``
    or an operator ``{"sum": [...]}`` / ``{"product": [...]}`` over sub-trees.
    Missing parameter values fall back to the package defaults.
    """
    kinds: list[str] = []
    slots: list[dict] = []

    def build(node) -> KernelNode:
        if not isinstance(node, dict):
            raise ConfigError(f"kernel node must be a mapping, got {type(node).__name__}")
        if "sum" in node or "product" in node:
            op = "sum" if "sum" in node else "product"
            if len(node) != 1:
                raise ConfigError(f"kernel operator node must have exactly the '{op}' key")
            children = node[op]
            if not isinstance(children, (list, tuple)) or not children:
                raise ConfigError(f"kernel '{op}' needs a non-empty list of children")
            built = tuple(build(c) for c in children)
            return Sum(built) if op == "sum" else Product(built)
        kind = node.get("kind")
        if kind not in PRIMITIVE_PARAMS:
            raise ConfigError(
                f"unknown kernel kind {kind!r}; expected one of {sorted(PRIMITIVE_PARAMS)}"
            )
        slots.append(_leaf_params_from_config(kind, node))
        kinds.append(kind)
        return Leaf(kind, len(kinds) - 1)

    root = build(tree)
    return KernelSpec(root, tuple(kinds)), tuple(slots)


def spec_to_config(spec: KernelSpec, params: KernelParams):
    """Inverse of :func:`make_spec`, with constrained parameter values."""
    values = constrained(params)

    def unbuild(node: KernelNode):
        if isinstance(node, Leaf):
            return {"kind": node.kind, **values[node.index]}
        key = "sum" if isinstance(node, Sum) else "product"
        return {key: [unbuild(t) for t in node.terms]}

    return unbuild(spec.root)


DEFAULT_KERNEL_CONFIG = {
    "sum": [
        {"kind": "matern32"},
        {"kind": "rational_quadratic"},
        {"kind": "rbf"},
        {"product": [{"kind": "periodic"}, {"kind": "rbf"}]},
    ]
}


def default_kernel() -> tuple[KernelSpec, KernelParams]:
    """The composite kernel used by the experiment configs."""
    return make_spec(DEFAULT_KERNEL_CONFIG)


def spec_structure(spec: KernelSpec):
    """Config tree of the kernel with no parameter values; round-trips
    through :func:`make_spec` to rebuild an identical spec."""

    def unbuild(node: KernelNode):
        if isinstance(node, Leaf):
            return {"kind": node.kind}
        key = "sum" if isinstance(node, Sum) else "product"
        return {key: [unbuild(t) for t in node.terms]}

    return unbuild(spec.root)


def flatten_raw(spec: KernelSpec, params: KernelParams) -> np.ndarray:
    """Unconstrained parameter values as one flat array in canonical order."""
    out = []
    for kind, slot in zip(spec.leaf_kinds, params):
        out.extend(float(slot[name]) for name in PRIMITIVE_PARAMS[kind])
    return np.asarray(out, dtype=np.float64)


def unflatten_raw(spec: KernelSpec, values: np.ndarray) -> KernelParams:
    """Inverse of :func:`flatten_raw`."""
    values = np.asarray(values, dtype=np.float64).ravel()
    need = sum(len(PRIMITIVE_PARAMS[kind]) for kind in spec.leaf_kinds)
    if values.size != need:
        raise InvalidInputError(
            f"kernel raw vector has {values.size} entries, spec needs {need}"
        )
    slots = []
    pos = 0
    for kind in spec.leaf_kinds:
        names = PRIMITIVE_PARAMS[kind]
        slots.append(
            {name: jnp.asarray(values[pos + i]) for i, name in enumerate(names)}
        )
        pos += len(names)
    return tuple(slots)


def perturb_params(params: KernelParams, rng: np.random.Generator, scale=0.3) -> KernelParams:
    """Jitter unconstrained kernel parameters; useful for randomized tests."""
    return tuple(
        {k: v + scale * rng.standard_normal() for k, v in slot.items()} for slot in params
    )
