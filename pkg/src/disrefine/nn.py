"""Manual-backprop primitives on (B, C, H, W) float64 arrays.

Every forward has a matching closed-form backward; there is no autodiff.
The 3x3 convolution kernels are JIT-compiled loops when numba is available
(pure-numpy im2col otherwise); in both cases each output element is
accumulated in a fixed order, so results are bit-reproducible regardless of
thread count. Max-pool ties route the gradient to the first maximum.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

try:  # pragma: no cover - exercised implicitly by every conv call
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


if _HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _conv3x3_kernel(xp, w, bias, y):
        b, c, hp, wp = xp.shape
        cout = w.shape[0]
        h = hp - 2
        wd = wp - 2
        for bo in prange(b * cout):
            bi = bo // cout
            o = bo % cout
            for i in range(h):
                yrow = y[bi, o, i]
                for j in range(wd):
                    yrow[j] = bias[o]
                for cc in range(c):
                    for u in range(3):
                        xrow = xp[bi, cc, i + u]
                        w0 = w[o, cc, u, 0]
                        w1 = w[o, cc, u, 1]
                        w2 = w[o, cc, u, 2]
                        for j in range(wd):
                            yrow[j] += w0 * xrow[j] + w1 * xrow[j + 1] + w2 * xrow[j + 2]

    @njit(parallel=True, cache=True)
    def _conv3x3_dw_kernel(xp, dy, dw):
        b, c, hp, wp = xp.shape
        cout = dy.shape[1]
        h = hp - 2
        wd = wp - 2
        for oc in prange(cout * c):
            o = oc // c
            cc = oc % c
            a00 = a01 = a02 = a10 = a11 = a12 = a20 = a21 = a22 = 0.0
            for bi in range(b):
                for i in range(h):
                    dyrow = dy[bi, o, i]
                    x0 = xp[bi, cc, i]
                    x1 = xp[bi, cc, i + 1]
                    x2 = xp[bi, cc, i + 2]
                    for j in range(wd):
                        d = dyrow[j]
                        a00 += d * x0[j]
                        a01 += d * x0[j + 1]
                        a02 += d * x0[j + 2]
                        a10 += d * x1[j]
                        a11 += d * x1[j + 1]
                        a12 += d * x1[j + 2]
                        a20 += d * x2[j]
                        a21 += d * x2[j + 1]
                        a22 += d * x2[j + 2]
            dw[o, cc, 0, 0] = a00
            dw[o, cc, 0, 1] = a01
            dw[o, cc, 0, 2] = a02
            dw[o, cc, 1, 0] = a10
            dw[o, cc, 1, 1] = a11
            dw[o, cc, 1, 2] = a12
            dw[o, cc, 2, 0] = a20
            dw[o, cc, 2, 1] = a21
            dw[o, cc, 2, 2] = a22


def _pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def _im2col3(x: np.ndarray) -> np.ndarray:
    """Unfold 3x3 same-padded neighborhoods into (B, Cin*9, H*W)."""
    b, c, h, w = x.shape
    xp = _pad1(x)
    cols = np.empty((b, c, 3, 3, h, w), dtype=np.float64)
    for u in range(3):
        for v in range(3):
            cols[:, :, u, v] = xp[:, :, u : u + h, v : v + w]
    return cols.reshape(b, c * 9, h * w)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray):
    """Same-padding 3x3 convolution; w has shape (Cout, Cin, 3, 3).

    Returns (y, ctx); ctx carries whatever the matching backward needs.
    """
    b, c, h, wd = x.shape
    cout = w.shape[0]
    if _HAVE_NUMBA:
        xp = _pad1(x)
        y = np.empty((b, cout, h, wd), dtype=np.float64)
        _conv3x3_kernel(xp, w, bias, y)
        return y, ("pad", xp)
    cols = _im2col3(x)
    y = np.matmul(w.reshape(cout, c * 9)[None], cols)
    y += bias[None, :, None]
    return y.reshape(b, cout, h, wd), ("im2col", cols)


def conv3x3_backward(dy: np.ndarray, ctx, w: np.ndarray):
    """Returns (dx, dw, dbias) given the forward's context."""
    kind, saved = ctx
    b, cout, h, wd = dy.shape
    c = w.shape[1]
    dbias = dy.sum(axis=(0, 2, 3))
    if kind == "pad":
        xp = saved
        dw = np.empty_like(w)
        _conv3x3_dw_kernel(xp, dy, dw)
        # dx is the correlation of padded dy with the kernel rotated 180
        # degrees and its channel axes swapped.
        w_rot = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dyp = _pad1(dy)
        dx = np.empty((b, c, h, wd), dtype=np.float64)
        _conv3x3_kernel(dyp, w_rot, np.zeros(c), dx)
        return dx, dw, dbias
    cols = saved
    dy2 = dy.reshape(b, cout, h * wd)
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = np.matmul(w.reshape(cout, c * 9).T[None], dy2).reshape(b, c, 3, 3, h, wd)
    dxp = np.zeros((b, c, h + 2, wd + 2), dtype=np.float64)
    for u in range(3):
        for v in range(3):
            dxp[:, :, u : u + h, v : v + wd] += dcols[:, :, u, v]
    return dxp[:, :, 1 : h + 1, 1 : wd + 1], dw, dbias


def conv1x1_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Pointwise convolution; w has shape (Cout, Cin, 1, 1)."""
    b, c, h, wd = x.shape
    w2 = w.reshape(w.shape[0], c)
    y = np.matmul(w2[None], x.reshape(b, c, h * wd))
    return (y + bias[None, :, None]).reshape(b, w.shape[0], h, wd)


def conv1x1_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    b, c, h, wd = x.shape
    cout = w.shape[0]
    dy2 = dy.reshape(b, cout, h * wd)
    x2 = x.reshape(b, c, h * wd)
    dw = np.matmul(dy2, x2.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dbias = dy2.sum(axis=(0, 2))
    dx = np.matmul(w.reshape(cout, c).T[None], dy2).reshape(b, c, h, wd)
    return dx, dw, dbias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pooling; returns (y, argmax indices for backward)."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    windows = (
        x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    )
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    b, c, h2, w2 = dy.shape
    grid = np.zeros((b, c, h2, w2, 4), dtype=np.float64)
    np.put_along_axis(grid, idx[..., None], dy[..., None], axis=-1)
    return grid.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)


def upsample_forward(x: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upsampling by an integer factor."""
    if factor == 1:
        return x
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def upsample_backward(dy: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return dy
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


class Adam:
    """Standard Adam over a name->array parameter dict, updated in place."""

    def __init__(self, params: dict, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name in self.params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
