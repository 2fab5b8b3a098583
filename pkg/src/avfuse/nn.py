"""Minimal numeric kernel: dense layers with manual gradients, softmax,
and the Adam optimizer.

All arrays are float64, row-major, with the batch as the leading
dimension.  Every function is pure: Adam returns a new state instead of
mutating, so values can be shared read-only across concurrent tasks.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError

FLOAT = np.float64


def as_tensor(values) -> np.ndarray:
    """Coerce to the package-wide tensor convention (float64, C-order)."""
    return np.ascontiguousarray(values, dtype=FLOAT)


@dataclass
class DenseLayer:
    """Fully connected layer: weights (in_dim, out_dim), bias (out_dim,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError(
                f"dense layer expects 2-D weights and 1-D bias, got "
                f"{self.weights.shape} and {self.bias.shape}"
            )
        if self.weights.shape[1] != self.bias.shape[0]:
            raise DimensionError(
                f"weights {self.weights.shape} inconsistent with bias "
                f"{self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


def dense_init(in_dim: int, out_dim: int, rng=None, scale: float | None = None) -> DenseLayer:
    """Glorot-uniform dense layer; zero weights when rng is None."""
    if rng is None:
        w = np.zeros((in_dim, out_dim), dtype=FLOAT)
    else:
        limit = scale if scale is not None else np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    return DenseLayer(w, np.zeros(out_dim, dtype=FLOAT))


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """y = x @ W + b for a batch of rows."""
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"dense_forward expects input (batch, {layer.in_dim}), got {x.shape} "
            f"for weights {layer.weights.shape}"
        )
    return x @ layer.weights + layer.bias


def dense_backward(layer: DenseLayer, x: np.ndarray, upstream_grad: np.ndarray):
    """Returns (dW, db, dx) for y = x @ W + b."""
    x = np.asarray(x, dtype=FLOAT)
    g = np.asarray(upstream_grad, dtype=FLOAT)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"dense_backward expects input (batch, {layer.in_dim}), got {x.shape}"
        )
    if g.shape != (x.shape[0], layer.out_dim):
        raise DimensionError(
            f"upstream grad {g.shape} inconsistent with input {x.shape} and "
            f"weights {layer.weights.shape}"
        )
    dw = x.T @ g
    db = g.sum(axis=0)
    dx = g @ layer.weights.T
    return dw, db, dx


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    x = np.asarray(x, dtype=FLOAT)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, upstream_grad, 0.0)


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_backward(x: np.ndarray, upstream_grad: np.ndarray,
                        slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0.0, upstream_grad, slope * upstream_grad)


@dataclass
class AdamState:
    """Adam moments for one flat parameter vector.

    Defaults are the published ones for the method (beta1=0.9,
    beta2=0.999, epsilon=1e-8).
    """

    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(n_params: int, learning_rate: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        step=0,
        m=np.zeros(n_params, dtype=FLOAT),
        v=np.zeros(n_params, dtype=FLOAT),
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    params = np.asarray(params, dtype=FLOAT)
    grads = np.asarray(grads, dtype=FLOAT)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError(
            f"adam_step shapes disagree: params {params.shape}, grads "
            f"{grads.shape}, moments {state.m.shape}"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, step=t, m=m, v=v)
