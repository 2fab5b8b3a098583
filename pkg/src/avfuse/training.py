"""Mixup, the KL-divergence + L2 loss, and the two training phases.

Phase I trains one backbone per input feature on (input, one-hot label)
pairs.  Phase II freezes the backbones and trains only the fusion
parameters and the classifier head over cached embeddings.  Both phases
run the same minibatch loop: mixup -> forward -> softmax -> KL loss ->
backprop -> Adam, and both are bit-deterministic for a fixed seed.

Mixup draws one lambda ~ Beta(alpha, alpha) per sample and a partner
from a random permutation; labels are mixed identically, so they stay
valid distributions.  In Phase II the five embeddings of a sample are
mixed with the same draws, which keeps mixup consistent with the
linearity of every fusion form.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import backbones, fusion, nn
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FreezeViolationError,
    ValidationError,
)


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.4
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and self.alpha <= 0:
            raise ConfigError(f"mixup alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LossConfig:
    lambda_l2: float = 1e-4
    epsilon_div: float = 1e-12

    def __post_init__(self):
        if self.lambda_l2 < 0:
            raise ConfigError(f"lambda_l2 must be >= 0, got {self.lambda_l2}")
        if self.epsilon_div <= 0:
            raise ConfigError(f"epsilon_div must be positive, got {self.epsilon_div}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    mixup: MixupConfig = MixupConfig()
    loss: LossConfig = LossConfig()


def mixup_batch(xs, ys, cfg: MixupConfig, rng, lam=None):
    """Convex-combine a batch with Beta(alpha, alpha) weights.

    xs may be a single array or a sequence of arrays sharing the batch
    axis; all are mixed with the same per-sample lambda and partner
    permutation (and so are the labels).  `lam` overrides the Beta draw
    for tests/diagnostics.  Returns (mixed_xs, mixed_ys) with xs' shape.
    """
    single = not isinstance(xs, (tuple, list))
    arrays = [np.asarray(x, dtype=np.float64) for x in ([xs] if single else xs)]
    ys = np.asarray(ys, dtype=np.float64)
    n = ys.shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise DimensionError("mixup inputs and labels disagree on batch size")
    if not cfg.enabled:
        return (arrays[0] if single else tuple(arrays)), ys
    if cfg.alpha <= 0:
        raise ConfigError(f"mixup alpha must be positive, got {cfg.alpha}")
    if lam is None:
        lam = rng.beta(cfg.alpha, cfg.alpha, size=n)
    else:
        lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    partner = rng.permutation(n)
    mixed = []
    for a in arrays:
        lam_a = lam.reshape((n,) + (1,) * (a.ndim - 1))
        mixed.append(lam_a * a + (1.0 - lam_a) * a[partner])
    ys_mixed = lam[:, None] * ys + (1.0 - lam[:, None]) * ys[partner]
    return (mixed[0] if single else tuple(mixed)), ys_mixed


def kl_loss(y, y_hat, params=None, cfg: LossConfig = LossConfig()) -> float:
    """Sum over samples of sum_c y*log(y/y_hat), plus (lambda/2)*||params||^2.

    0 * log(0/x) is taken as 0; y_hat is floored at epsilon_div before
    the log.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"y {y.shape} and y_hat {y_hat.shape} disagree")
    if np.any(y < 0):
        raise ValidationError("ground-truth rows must be nonnegative")
    y_hat = np.maximum(y_hat, cfg.epsilon_div)
    terms = np.where(y > 0, y * np.log(np.maximum(y, cfg.epsilon_div) / y_hat), 0.0)
    loss = float(terms.sum())
    if params is not None and cfg.lambda_l2 > 0:
        flat = np.asarray(params, dtype=np.float64).ravel()
        loss += 0.5 * cfg.lambda_l2 * float(flat @ flat)
    return loss


def kl_loss_grad_logits(y, probs) -> np.ndarray:
    """d(KL)/d(logits) through softmax: probs - y (valid when rows of y sum to 1)."""
    return np.asarray(probs, dtype=np.float64) - np.asarray(y, dtype=np.float64)


def _accuracy(probs, y_true) -> float:
    pred = probs.argmax(axis=1)
    truth = np.asarray(y_true).argmax(axis=1)
    return float((pred == truth).mean())


def backbone_probs(model: backbones.BackboneModel, inputs, batch_size: int = 16) -> np.ndarray:
    """Forward a stack of inputs in chunks; returns (N, n_classes) probs."""
    chunks = [
        backbones.forward_cache(model, inputs[s : s + batch_size])["probs"]
        for s in range(0, len(inputs), batch_size)
    ]
    return np.concatenate(chunks)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_phase1(model: backbones.BackboneModel, inputs, labels,
                 cfg: TrainConfig = TrainConfig()):
    """Train one backbone; returns (trained_model, history).

    inputs: (N, H, W, C) stacked model inputs; labels: (N, n_classes)
    one-hot rows.  History rows are (epoch, mean per-sample loss,
    training accuracy on the unmixed set).
    """
    if model.frozen:
        raise FreezeViolationError(f"{model.kind} is frozen; Phase I cannot train it")
    inputs = nn.as_tensor(inputs)
    labels = np.asarray(labels, dtype=np.float64)
    if inputs.ndim != 4 or inputs.shape[1:] != model.input_shape:
        raise DimensionError(
            f"{model.kind} expects inputs (N, {model.input_shape}), got {inputs.shape}"
        )
    if len(inputs) == 0:
        raise ValidationError("empty training set")
    if labels.shape != (len(inputs), model.n_classes):
        raise ValidationError(
            f"labels must be (N, {model.n_classes}) one-hot rows, got {labels.shape}"
        )

    rng = np.random.default_rng(cfg.seed)
    params = backbones.flatten_params(model)
    opt = nn.adam_init(params.size, learning_rate=cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        total_loss = 0.0
        for idx in _batches(len(inputs), cfg.batch_size, rng):
            xb, yb = mixup_batch(inputs[idx], labels[idx], cfg.mixup, rng)
            cache = backbones.forward_cache(model, xb)
            loss = kl_loss(yb, cache["probs"], params, cfg.loss)
            grads = backbones.backbone_backward(
                model, cache, kl_loss_grad_logits(yb, cache["probs"])
            )
            grads += cfg.loss.lambda_l2 * params
            params, opt = nn.adam_step(opt, params, grads)
            model = backbones.with_params(model, params)
            total_loss += loss
        probs = backbone_probs(model, inputs, cfg.batch_size)
        history.append((epoch, total_loss / len(inputs), _accuracy(probs, labels)))
    return model, history


def _phase2_flatten(params: fusion.FusionParams, head: nn.DenseLayer):
    parts = [params.active()[name] for name in params.method.active_params]
    parts += [head.weights.ravel(), head.bias]
    return np.concatenate(parts)


def _phase2_unflatten(flat, method: fusion.FusionMethod, params, head):
    pos = 0
    values = params.named()
    for name in method.active_params:
        d = method.dim
        values[name] = flat[pos : pos + d].copy()
        pos += d
    new_params = fusion.FusionParams(method=method, **values)
    wsize = head.weights.size
    w = flat[pos : pos + wsize].reshape(head.weights.shape).copy()
    b = flat[pos + wsize :].copy()
    return new_params, nn.DenseLayer(w, b)


_MODE_ZEROED = {
    "audio_visual": (),
    "audio_only": ("w4", "w5"),
    "visual_only": ("w1", "w2", "w3"),
}


def _phase2_mask(method: fusion.FusionMethod, head: nn.DenseLayer, mode: str):
    """1/0 vector over the flat Phase-II parameters; 0 pins a weight at zero."""
    if mode not in _MODE_ZEROED:
        raise ValidationError(f"unknown training mode {mode!r}")
    mask = []
    for name in method.active_params:
        off = name in _MODE_ZEROED[mode]
        mask.append(np.zeros(method.dim) if off else np.ones(method.dim))
    mask.append(np.ones(head.weights.size + head.bias.size))
    return np.concatenate(mask)


def train_phase2(method: fusion.FusionMethod, params: fusion.FusionParams,
                 head: nn.DenseLayer, sets: backbones.EmbeddingSet, labels,
                 cfg: TrainConfig = TrainConfig(), mode: str = "audio_visual",
                 frozen_models=()):
    """Train fusion params + head over frozen embeddings.

    sets holds batched (N, d) embeddings at the method's tap; labels are
    (N, n_classes) rows.  mode audio_only/visual_only pins the other
    branch's weights at zero (frozen), realizing the single-modality
    ablations.  Any model passed in frozen_models is verified bit-
    unchanged afterwards.  Returns (params, head, history).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if sets.tap != method.tap:
        raise ContractError(
            f"{method.id} needs embeddings at tap {method.tap}, got {sets.tap}"
        )
    if head.in_dim != method.output_dim:
        raise ContractError(
            f"{method.id} produces dim {method.output_dim}, head expects {head.in_dim}"
        )
    n = sets.ae_g.shape[0]
    if n == 0:
        raise ValidationError("empty training set")
    if labels.shape[0] != n:
        raise DimensionError(f"{n} embedding sets but {labels.shape[0]} label rows")

    frozen_before = [backbones.flatten_params(m).copy() for m in frozen_models]

    rng = np.random.default_rng(cfg.seed)
    mask = _phase2_mask(method, head, mode)
    flat = _phase2_flatten(params, head) * mask
    params, head = _phase2_unflatten(flat, method, params, head)
    opt = nn.adam_init(flat.size, learning_rate=cfg.learning_rate)
    emb_arrays = [getattr(sets, name) for name in backbones.EMBEDDING_NAMES]

    history = []
    for epoch in range(cfg.epochs):
        total_loss = 0.0
        for idx in _batches(n, cfg.batch_size, rng):
            batch_embs = [a[idx] for a in emb_arrays]
            mixed, yb = mixup_batch(tuple(batch_embs), labels[idx], cfg.mixup, rng)
            eb = backbones.EmbeddingSet(tap=sets.tap, **dict(zip(backbones.EMBEDDING_NAMES, mixed)))
            fused = fusion.fuse(method, params, eb)
            logits = nn.dense_forward(head, fused)
            probs = nn.softmax(logits)
            loss = kl_loss(yb, probs, flat, cfg.loss)
            glogits = kl_loss_grad_logits(yb, probs)
            dw, db, dfused = nn.dense_backward(head, fused, glogits)
            pgrads, _ = fusion.fuse_backward(method, params, eb, dfused)
            grad_parts = [pgrads[name] for name in method.active_params]
            grad_parts += [dw.ravel(), db]
            grads = np.concatenate(grad_parts) + cfg.loss.lambda_l2 * flat
            grads *= mask
            flat, opt = nn.adam_step(opt, flat, grads)
            flat *= mask
            params, head = _phase2_unflatten(flat, method, params, head)
            total_loss += loss
        bundle = fusion.FusionBundle(method, params, head, mode)
        probs = fusion.predict_probs(bundle, sets)
        history.append((epoch, total_loss / n, _accuracy(probs, labels)))

    for model, before in zip(frozen_models, frozen_before):
        after = backbones.flatten_params(model)
        if not np.array_equal(before, after):
            raise FreezeViolationError(
                f"{model.kind} parameters changed during Phase II training"
            )
    return params, head, history


def finite_difference_audit(loss_and_grad, params, h: float = 1e-5) -> float:
    """Worst relative disagreement between analytic and central-difference
    gradients over every scalar in params.

    loss_and_grad(params) must return (loss, grad).  The relative error
    denominator is floored at 1e-6 so near-zero gradients compare on an
    absolute scale.
    """
    if h <= 0:
        raise ConfigError(f"step h must be positive, got {h}")
    params = np.asarray(params, dtype=np.float64)
    _, analytic = loss_and_grad(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise DimensionError(
            f"gradient shape {analytic.shape} does not match params {params.shape}"
        )
    worst = 0.0
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] = params[i] + h
        hi, _ = loss_and_grad(bumped)
        bumped[i] = params[i] - h
        lo, _ = loss_and_grad(bumped)
        numeric = (hi - lo) / (2.0 * h)
        denom = max(abs(numeric), abs(analytic[i]), 1e-6)
        worst = max(worst, abs(numeric - analytic[i]) / denom)
    return worst
