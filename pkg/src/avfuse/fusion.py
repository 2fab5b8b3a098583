"""The six closed-form fusion layers combining the five embeddings.

Three algebraic forms, each instantiated at the 1024-dim tap (f1-f3) and
the 10-dim tap (f4-f6):

  flat:          f = ae_g*w1 + ae_m*w2 + ae_c*w3 + ve_i*w4 + ve_c*w5 + b
  hierarchical:  a = ae_g*w1 + ae_m*w2 + ae_c*w3
                 v = ve_i*w4 + ve_c*w5
                 f = a*wa + v*wv + b
  concat:        f = [a, v]                      (dimension 2d, no bias)

'*' is the element-wise product; every trainable vector has the tap
dimension.  All forms are linear in the embeddings, and f1/f4, f2/f5,
f3/f6 are algebraically identical up to the tap dimension.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .backbones import (
    AUDIO_EMBEDDINGS,
    EMBEDDING_NAMES,
    TAP_DIMS,
    VISUAL_EMBEDDINGS,
    EmbeddingSet,
)
from .errors import ContractError, DimensionError, ValidationError

FLAT_LINEAR = "flat_linear"
HIERARCHICAL_LINEAR = "hierarchical_linear"
CONCAT = "concat"

WEIGHT_NAMES = ("w1", "w2", "w3", "w4", "w5")
PARAM_NAMES = WEIGHT_NAMES + ("wa", "wv", "b")

# Embedding slot -> its flat weight, in equation order.
EMBEDDING_WEIGHT = dict(zip(EMBEDDING_NAMES, WEIGHT_NAMES))


@dataclass(frozen=True)
class FusionMethod:
    id: str
    tap: str
    form: str

    @property
    def dim(self) -> int:
        return TAP_DIMS[self.tap]

    @property
    def output_dim(self) -> int:
        return 2 * self.dim if self.form == CONCAT else self.dim

    @property
    def active_params(self) -> tuple:
        if self.form == FLAT_LINEAR:
            return WEIGHT_NAMES + ("b",)
        if self.form == HIERARCHICAL_LINEAR:
            return PARAM_NAMES
        return WEIGHT_NAMES


FUSION_METHODS = {
    "f1": FusionMethod("f1", "fc1024", FLAT_LINEAR),
    "f2": FusionMethod("f2", "fc1024", HIERARCHICAL_LINEAR),
    "f3": FusionMethod("f3", "fc1024", CONCAT),
    "f4": FusionMethod("f4", "fc10", FLAT_LINEAR),
    "f5": FusionMethod("f5", "fc10", HIERARCHICAL_LINEAR),
    "f6": FusionMethod("f6", "fc10", CONCAT),
}


def fusion_method(method_id: str) -> FusionMethod:
    try:
        return FUSION_METHODS[method_id]
    except KeyError:
        raise ValidationError(
            f"unknown fusion method {method_id!r} (expected f1..f6)"
        ) from None


@dataclass
class FusionParams:
    """All eight trainable vectors; which ones act depends on the method."""

    method: FusionMethod
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    w5: np.ndarray
    wa: np.ndarray
    wv: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        d = self.method.dim
        for name in PARAM_NAMES:
            arr = nn.as_tensor(getattr(self, name))
            if arr.shape != (d,):
                raise DimensionError(
                    f"fusion parameter {name} must have shape ({d},) for "
                    f"{self.method.id}, got {arr.shape}"
                )
            setattr(self, name, arr)

    def named(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def active(self):
        return {name: getattr(self, name) for name in self.method.active_params}


def init_fusion_params(method: FusionMethod, seed: int = 0,
                       jitter: float = 0.0) -> FusionParams:
    """Unit weights, zero bias; optional seeded jitter (off by default)."""
    d = method.dim
    values = {name: np.ones(d, dtype=nn.FLOAT) for name in PARAM_NAMES[:-1]}
    values["b"] = np.zeros(d, dtype=nn.FLOAT)
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        for name in PARAM_NAMES:
            values[name] = values[name] + rng.normal(0.0, jitter, size=d)
    return FusionParams(method=method, **values)


def _check(method: FusionMethod, params: FusionParams, e: EmbeddingSet):
    if e.tap != method.tap:
        raise ContractError(
            f"{method.id} expects embeddings at tap {method.tap}, got {e.tap}"
        )
    if params.method.dim != method.dim:
        raise DimensionError(
            f"params built for dim {params.method.dim}, method needs {method.dim}"
        )
    if e.dim != method.dim:
        raise DimensionError(
            f"embeddings have dim {e.dim}, method {method.id} needs {method.dim}"
        )


def _branches(params: FusionParams, e: EmbeddingSet):
    a = sum(getattr(e, n) * getattr(params, EMBEDDING_WEIGHT[n]) for n in AUDIO_EMBEDDINGS)
    v = sum(getattr(e, n) * getattr(params, EMBEDDING_WEIGHT[n]) for n in VISUAL_EMBEDDINGS)
    return a, v


def fuse(method: FusionMethod, params: FusionParams, e: EmbeddingSet) -> np.ndarray:
    """Audio-visual embedding of shape (..., d) or (..., 2d) for concat."""
    _check(method, params, e)
    a, v = _branches(params, e)
    if method.form == FLAT_LINEAR:
        return a + v + params.b
    if method.form == HIERARCHICAL_LINEAR:
        return a * params.wa + v * params.wv + params.b
    return np.concatenate([a, v], axis=-1)


def fuse_backward(method: FusionMethod, params: FusionParams, e: EmbeddingSet,
                  upstream_grad: np.ndarray):
    """Exact gradients of fuse.

    Returns (param_grads, embedding_grads): param_grads maps every
    parameter name to a (d,) array (zeros for parameters the method does
    not use, summed over any batch axes); embedding_grads maps each
    embedding name to an array shaped like that embedding.
    """
    _check(method, params, e)
    g = nn.as_tensor(upstream_grad)
    if g.shape[-1] != method.output_dim or g.shape[:-1] != e.ae_g.shape[:-1]:
        raise DimensionError(
            f"upstream grad shape {g.shape} inconsistent with method "
            f"{method.id} output dim {method.output_dim} and batch shape "
            f"{e.ae_g.shape[:-1]}"
        )
    d = method.dim
    batch_axes = tuple(range(g.ndim - 1))

    def reduce(x):
        return x.sum(axis=batch_axes) if batch_axes else x

    param_grads = {name: np.zeros(d, dtype=nn.FLOAT) for name in PARAM_NAMES}

    if method.form == CONCAT:
        ga, gv = g[..., :d], g[..., d:]
    elif method.form == HIERARCHICAL_LINEAR:
        a, v = _branches(params, e)
        param_grads["wa"] = reduce(a * g)
        param_grads["wv"] = reduce(v * g)
        param_grads["b"] = reduce(g)
        ga, gv = params.wa * g, params.wv * g
    else:
        param_grads["b"] = reduce(g)
        ga, gv = g, g

    embedding_grads = {}
    for name in EMBEDDING_NAMES:
        branch_grad = ga if name in AUDIO_EMBEDDINGS else gv
        wname = EMBEDDING_WEIGHT[name]
        param_grads[wname] = reduce(getattr(e, name) * branch_grad)
        embedding_grads[name] = getattr(params, wname) * branch_grad
    return param_grads, embedding_grads


@dataclass
class FusionBundle:
    """A trained Phase-II classifier: fusion params plus the dense head."""

    method: FusionMethod
    params: FusionParams
    head: nn.DenseLayer
    mode: str = "audio_visual"  # audio_only / visual_only / audio_visual


def predict_probs(bundle: FusionBundle, sets: EmbeddingSet) -> np.ndarray:
    fused = fuse(bundle.method, bundle.params, sets)
    if fused.ndim == 1:
        fused = fused[None]
    if bundle.head.in_dim != bundle.method.output_dim:
        raise ContractError(
            f"head expects input dim {bundle.head.in_dim}, fusion "
            f"{bundle.method.id} produces {bundle.method.output_dim}"
        )
    return nn.softmax(nn.dense_forward(bundle.head, fused))
