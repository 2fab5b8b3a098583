"""Numpy implementation of the convolution/pooling kernels.

Semantics match ``avfuse.kernels._core`` exactly: float64, channels-last
layout ``(batch, height, width, channels)``, stride-1 convolution with
'same' zero padding and odd kernel sizes, 2x2 average pooling with
floor truncation of odd trailing rows/columns.

Convolutions are evaluated as im2col + BLAS matmul.  The column matrix
is materialized in bounded chunks so peak memory stays flat regardless
of batch size.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Upper bound on the number of float64 elements materialized per im2col
# chunk (~32 MB).
_CHUNK_ELEMS = 4_000_000


def _col_matrix(xp, kh, kw):
    # xp: padded input (b, H+kh-1, W+kw-1, ci) -> columns (b*H*W, ci*kh*kw)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (b,H,W,ci,kh,kw)
    b, h, w, ci = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3)  # (b,H,W,kh,kw,ci)
    return np.ascontiguousarray(cols).reshape(b * h * w, kh * kw * ci)


def _batch_chunks(batch, per_sample_elems):
    step = max(1, _CHUNK_ELEMS // max(1, per_sample_elems))
    for start in range(0, batch, step):
        yield start, min(batch, start + step)


def conv2d_forward(x, w, b):
    """'same' stride-1 convolution: (B,H,W,Ci) x (kh,kw,Ci,Co) -> (B,H,W,Co)."""
    bsz, h, wid, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2
    wmat = w.reshape(kh * kw * ci, co)
    y = np.empty((bsz, h, wid, co), dtype=np.float64)
    per_sample = h * wid * kh * kw * ci
    for s, e in _batch_chunks(bsz, per_sample):
        xp = np.pad(x[s:e], ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        cols = _col_matrix(xp, kh, kw)
        y[s:e] = (cols @ wmat).reshape(e - s, h, wid, co)
    y += b
    return y


def conv2d_backward(x, w, gy):
    """Gradients of conv2d_forward; returns (gx, gw, gb)."""
    bsz, h, wid, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2

    gb = gy.sum(axis=(0, 1, 2))

    gw_mat = np.zeros((kh * kw * ci, co), dtype=np.float64)
    per_sample = h * wid * kh * kw * ci
    for s, e in _batch_chunks(bsz, per_sample):
        xp = np.pad(x[s:e], ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        cols = _col_matrix(xp, kh, kw)
        gw_mat += cols.T @ gy[s:e].reshape(-1, co)
    gw = gw_mat.reshape(kh, kw, ci, co)

    # gx of a stride-1 'same' convolution is itself a 'same' convolution of
    # gy with the spatially flipped kernel and in/out channels swapped.
    w_t = np.ascontiguousarray(w[::-1, ::-1].swapaxes(2, 3))
    gx = conv2d_forward(gy, w_t, np.zeros(ci, dtype=np.float64))
    return gx, gw, gb


def avgpool2_forward(x):
    """2x2 average pooling, stride 2; odd trailing rows/columns dropped."""
    bsz, h, wid, c = x.shape
    h2, w2 = h // 2, wid // 2
    v = x[:, : h2 * 2, : w2 * 2, :].reshape(bsz, h2, 2, w2, 2, c)
    return v.mean(axis=(2, 4))


def avgpool2_backward(x_shape, gy):
    """Gradient of avgpool2_forward for an input of shape x_shape."""
    bsz, h, wid, c = x_shape
    h2, w2 = h // 2, wid // 2
    gx = np.zeros((bsz, h, wid, c), dtype=np.float64)
    spread = np.broadcast_to(
        gy[:, :, None, :, None, :] * 0.25, (bsz, h2, 2, w2, 2, c)
    )
    gx[:, : h2 * 2, : w2 * 2, :] = spread.reshape(bsz, h2 * 2, w2 * 2, c)
    return gx
