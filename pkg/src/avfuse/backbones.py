"""Phase-I feature producers: five toy trainable backbones and the
embedding machinery around them.

Each backbone is a small convolutional stack (3x3 kernels, widths
8/16/32, each block followed by 2x2 average pooling and ReLU) with
global average pooling and an FC(1024) -> FC(10) head.  Embeddings are
tapped at the first fully connected layer (post-ReLU, dim 1024) or the
second (pre-softmax, dim 10).  Audio models consume 128x305x6 stacked
spectrograms; visual models consume 224x224x3 RGB images in [0, 1].
"""

from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from . import kernels, nn
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    NotFoundError,
    ValidationError,
)

AUDIO_KINDS = ("aud_mel", "aud_gam", "aud_cqt")
VISUAL_KINDS = ("vis_inc", "vis_conv")
MODEL_KINDS = AUDIO_KINDS + VISUAL_KINDS

# Which front-end feeds each audio model.
KIND_FEATURE = {"aud_mel": "mel", "aud_gam": "gam", "aud_cqt": "cqt"}

# Embedding-set slot owned by each model.
KIND_EMBEDDING = {
    "aud_gam": "ae_g",
    "aud_mel": "ae_m",
    "aud_cqt": "ae_c",
    "vis_inc": "ve_i",
    "vis_conv": "ve_c",
}
EMBEDDING_NAMES = ("ae_g", "ae_m", "ae_c", "ve_i", "ve_c")
AUDIO_EMBEDDINGS = EMBEDDING_NAMES[:3]
VISUAL_EMBEDDINGS = EMBEDDING_NAMES[3:]

TAPS = ("fc1024", "fc10")
TAP_DIMS = {"fc1024": 1024, "fc10": 10}

AUDIO_INPUT_SHAPE = (128, 305, 6)
VISUAL_INPUT_SHAPE = (224, 224, 3)


def default_input_shape(kind: str):
    if kind in AUDIO_KINDS:
        return AUDIO_INPUT_SHAPE
    if kind in VISUAL_KINDS:
        return VISUAL_INPUT_SHAPE
    raise ValidationError(f"unknown model kind {kind!r} (expected one of {MODEL_KINDS})")


@dataclass
class BackboneModel:
    kind: str
    input_shape: tuple  # (H, W, C)
    conv_layers: list  # [(w (3,3,ci,co), b (co,)), ...]
    fc1: nn.DenseLayer  # pool_dim -> embedding dim (1024)
    fc2: nn.DenseLayer  # embedding dim -> classes (10)
    frozen: bool = False

    @property
    def emb_dim(self) -> int:
        return self.fc1.out_dim

    @property
    def n_classes(self) -> int:
        return self.fc2.out_dim


def build_backbone(kind: str, seed: int = 0, input_shape=None,
                   conv_widths=(8, 16, 32), emb_dim: int = 1024,
                   n_classes: int = 10, zero_init: bool = False) -> BackboneModel:
    """Deterministically initialized backbone (He conv, Glorot dense)."""
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r} (expected one of {MODEL_KINDS})")
    shape = tuple(input_shape) if input_shape is not None else default_input_shape(kind)
    h, w = shape[0], shape[1]
    for _ in conv_widths:
        h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ValidationError(
                f"input shape {shape} too small for {len(conv_widths)} pooling stages"
            )
    rng = np.random.default_rng(seed)
    conv_layers = []
    ci = shape[2]
    for co in conv_widths:
        if zero_init:
            wgt = np.zeros((3, 3, ci, co))
        else:
            wgt = rng.normal(0.0, np.sqrt(2.0 / (9 * ci)), size=(3, 3, ci, co))
        conv_layers.append((nn.as_tensor(wgt), np.zeros(co, dtype=nn.FLOAT)))
        ci = co
    fc1 = nn.dense_init(conv_widths[-1], emb_dim, None if zero_init else rng)
    fc2 = nn.dense_init(emb_dim, n_classes, None if zero_init else rng)
    return BackboneModel(kind, shape, conv_layers, fc1, fc2)


def _check_input(model: BackboneModel, x: np.ndarray) -> np.ndarray:
    x = nn.as_tensor(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise DimensionError(
            f"{model.kind} expects input {model.input_shape} "
            f"(optionally batched), got {tuple(x.shape)}"
        )
    return x


def standardize_input(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per sample and channel.

    Raw log-spectrograms sit around the log floor with a huge offset;
    normalizing here keeps the conv stack well conditioned without
    touching the front-end output contract.  Inputs are data, never
    trained, so this adds no gradient path.
    """
    mean = x.mean(axis=(1, 2), keepdims=True)
    std = x.std(axis=(1, 2), keepdims=True)
    return (x - mean) / (std + 1e-8)


_NORM_EPS = 1e-8


def _featnorm_forward(x: np.ndarray):
    """Per-row standardization of pooled features (no trainable affine).

    Global average pooling leaves a large common-mode offset that buries
    the class signal; removing it per sample keeps the dense head well
    conditioned.
    """
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered**2).mean(axis=1, keepdims=True))
    z = centered / (std + _NORM_EPS)
    return z, std


def _featnorm_backward(z: np.ndarray, std: np.ndarray, g: np.ndarray) -> np.ndarray:
    # exact gradient of z = (x - mean)/(std + eps); the second term uses
    # 1/std from d(std)/dx, guarded since z == 0 wherever std == 0
    centered = (g - g.mean(axis=1, keepdims=True)) / (std + _NORM_EPS)
    shrink = z * (g * z).mean(axis=1, keepdims=True) / np.maximum(std, _NORM_EPS)
    return centered - shrink


def forward_cache(model: BackboneModel, x: np.ndarray) -> dict:
    """Forward pass keeping every intermediate needed for backprop."""
    x = standardize_input(_check_input(model, x))
    cache = {"x": x, "conv_in": [], "conv_out": [], "pooled": []}
    a = x
    for wgt, bias in model.conv_layers:
        cache["conv_in"].append(a)
        y = kernels.conv2d_forward(a, wgt, bias)
        p = kernels.avgpool2_forward(y)
        cache["conv_out"].append(y)
        cache["pooled"].append(p)
        a = nn.relu(p)
    cache["gap_in_shape"] = a.shape
    gap = a.mean(axis=(1, 2))
    feat, feat_std = _featnorm_forward(gap)
    z1 = nn.dense_forward(model.fc1, feat)
    e1 = nn.relu(z1)
    z2 = nn.dense_forward(model.fc2, e1)
    cache.update(gap=gap, feat=feat, feat_std=feat_std, z1=z1,
                 emb1024=e1, emb10=z2, probs=nn.softmax(z2))
    return cache


def backbone_forward(model: BackboneModel, x: np.ndarray):
    """Returns (emb1024, emb10, probs); unbatched input gives 1-D outputs."""
    single = np.asarray(x).ndim == 3
    c = forward_cache(model, x)
    out = (c["emb1024"], c["emb10"], c["probs"])
    if single:
        return tuple(v[0] for v in out)
    return out


def backbone_backward(model: BackboneModel, cache: dict, grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss wrt flatten_params(model), given dL/d emb10."""
    grads = {}
    dw2, db2, de1 = nn.dense_backward(model.fc2, cache["emb1024"], grad_logits)
    dz1 = nn.relu_backward(cache["z1"], de1)
    dw1, db1, dfeat = nn.dense_backward(model.fc1, cache["feat"], dz1)
    dgap = _featnorm_backward(cache["feat"], cache["feat_std"], dfeat)
    grads["fc1"] = (dw1, db1)
    grads["fc2"] = (dw2, db2)

    b, h, w, c = cache["gap_in_shape"]
    da = np.broadcast_to(dgap[:, None, None, :] / (h * w), (b, h, w, c))
    da = np.ascontiguousarray(da)
    conv_grads = [None] * len(model.conv_layers)
    for i in reversed(range(len(model.conv_layers))):
        dp = nn.relu_backward(cache["pooled"][i], da)
        dy = kernels.avgpool2_backward(cache["conv_out"][i].shape, dp)
        da, dwi, dbi = kernels.conv2d_backward(
            cache["conv_in"][i], model.conv_layers[i][0], dy
        )
        conv_grads[i] = (dwi, dbi)
    grads["conv"] = conv_grads
    return _flatten_grads(model, grads)


def _param_arrays(model: BackboneModel):
    for wgt, bias in model.conv_layers:
        yield wgt
        yield bias
    yield model.fc1.weights
    yield model.fc1.bias
    yield model.fc2.weights
    yield model.fc2.bias


def flatten_params(model: BackboneModel) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _param_arrays(model)])


def _flatten_grads(model: BackboneModel, grads: dict) -> np.ndarray:
    parts = []
    for dwi, dbi in grads["conv"]:
        parts.append(dwi.ravel())
        parts.append(dbi.ravel())
    for key in ("fc1", "fc2"):
        dw, db = grads[key]
        parts.append(dw.ravel())
        parts.append(db.ravel())
    return np.concatenate(parts)


def with_params(model: BackboneModel, flat: np.ndarray) -> BackboneModel:
    """New model with parameters taken from a flat vector (flatten order)."""
    flat = np.asarray(flat, dtype=nn.FLOAT)
    expected = sum(a.size for a in _param_arrays(model))
    if flat.shape != (expected,):
        raise DimensionError(f"expected {expected} parameters, got {flat.shape}")
    pos = 0

    def take(like):
        nonlocal pos
        chunk = flat[pos : pos + like.size].reshape(like.shape).copy()
        pos += like.size
        return chunk

    conv_layers = [(take(w), take(b)) for w, b in model.conv_layers]
    fc1 = nn.DenseLayer(take(model.fc1.weights), take(model.fc1.bias))
    fc2 = nn.DenseLayer(take(model.fc2.weights), take(model.fc2.bias))
    return replace(model, conv_layers=conv_layers, fc1=fc1, fc2=fc2)


def tap_embedding(model: BackboneModel, x: np.ndarray, tap: str) -> np.ndarray:
    if tap not in TAPS:
        raise ValidationError(f"unknown tap {tap!r} (expected one of {TAPS})")
    emb1024, emb10, _ = backbone_forward(model, x)
    return emb1024 if tap == "fc1024" else emb10


@dataclass
class EmbeddingSet:
    """The five named embeddings at one tap; arrays are (..., d)."""

    ae_g: np.ndarray
    ae_m: np.ndarray
    ae_c: np.ndarray
    ve_i: np.ndarray
    ve_c: np.ndarray
    tap: str

    def __post_init__(self):
        for name in EMBEDDING_NAMES:
            setattr(self, name, nn.as_tensor(getattr(self, name)))
        dims = {name: getattr(self, name).shape[-1] for name in EMBEDDING_NAMES}
        if len(set(dims.values())) != 1:
            raise DimensionError(f"embedding dims disagree: {dims}")
        if self.tap not in TAPS:
            raise ValidationError(f"unknown tap {self.tap!r}")

    @property
    def dim(self) -> int:
        return self.ae_g.shape[-1]

    def named(self):
        return {name: getattr(self, name) for name in EMBEDDING_NAMES}


def stack_sets(sets) -> EmbeddingSet:
    """Batch a sequence of single-sample EmbeddingSets into one (N, d) set."""
    sets = list(sets)
    if not sets:
        raise ValidationError("cannot stack an empty sequence of embedding sets")
    taps = {s.tap for s in sets}
    if len(taps) != 1:
        raise ContractError(f"embedding sets at mixed taps: {sorted(taps)}")
    arrays = {
        name: np.stack([getattr(s, name) for s in sets]) for name in EMBEDDING_NAMES
    }
    return EmbeddingSet(tap=sets[0].tap, **arrays)


def load_embedding_set(store, sample_id: str, tap: str) -> EmbeddingSet:
    """Read one sample's five embeddings from an embedding cache."""
    from . import data_io

    if tap not in TAPS:
        raise ValidationError(f"unknown tap {tap!r} (expected one of {TAPS})")
    values = {}
    missing = []
    for kind, name in KIND_EMBEDDING.items():
        key = data_io.embedding_key(tap, kind, sample_id)
        try:
            values[name] = store.read(key)
        except NotFoundError:
            missing.append(name)
    if missing:
        raise NotFoundError(
            f"sample {sample_id!r} is missing embeddings {sorted(missing)} at tap {tap}"
        )
    want = TAP_DIMS[tap]
    for name, vec in values.items():
        if vec.shape != (want,):
            raise FormatError(
                f"embedding {name} for sample {sample_id!r} has shape "
                f"{vec.shape}, expected ({want},) at tap {tap}"
            )
    return EmbeddingSet(tap=tap, **values)


def load_image(path, size: int = 224) -> np.ndarray:
    """Decode an image to (size, size, 3) RGB float64 in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float64) / 255.0
