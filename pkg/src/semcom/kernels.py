"""Hot numeric kernels: 2-D convolution (NHWC) and bilinear resampling.

Each kernel exists twice: a loop version compiled with numba and a vectorized
numpy version. ``USING_NUMBA`` tells which one the public names point at.
Both are always importable through ``NUMPY_KERNELS`` for parity checks and
benchmarks; ``NUMBA_KERNELS`` is empty when numba is disabled.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, njit


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------- numpy path


def _windows(x, k, stride, padding):
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, ::stride, ::stride]  # (B, Ho, Wo, C, k, k)


def conv2d_forward_np(x, w, b, stride, padding):
    k = w.shape[0]
    win = _windows(x, k, stride, padding)
    return np.tensordot(win, w, axes=([3, 4, 5], [2, 0, 1])) + b


def conv2d_backward_np(x, w, grad_out, stride, padding):
    k = w.shape[0]
    bsz, h, wd, c = x.shape
    _, ho, wo, _ = grad_out.shape
    win = _windows(x, k, stride, padding)
    gw = np.tensordot(win, grad_out, axes=([0, 1, 2], [0, 1, 2]))  # (C, k, k, Cout)
    gw = gw.transpose(1, 2, 0, 3)
    gxp = np.zeros((bsz, h + 2 * padding, wd + 2 * padding, c))
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += grad_out @ w[i, j].T
    gx = gxp[:, padding:padding + h, padding:padding + wd, :]
    return np.ascontiguousarray(gx), gw, grad_out.sum(axis=(0, 1, 2))


def _interp_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = i * (n_in - 1) / (n_out - 1) if n_out > 1 else (n_in - 1) / 2.0
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def bilinear_np(img, out_h, out_w):
    ry = _interp_matrix(img.shape[0], out_h)
    rx = _interp_matrix(img.shape[1], out_w)
    # (C, H, W) -> (C, out_h, out_w), then back to channels-last
    return (ry @ img.transpose(2, 0, 1) @ rx.T).transpose(1, 2, 0)


# ---------------------------------------------------------------- loop path


def _conv2d_forward_loops(x, w, b, stride, padding):
    bsz, h, wd, c = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.empty((bsz, ho, wo, cout))
    for n in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                for co in range(cout):
                    out[n, oy, ox, co] = b[co]
                for i in range(k):
                    iy = oy * stride + i - padding
                    if iy < 0 or iy >= h:
                        continue
                    for j in range(k):
                        ix = ox * stride + j - padding
                        if ix < 0 or ix >= wd:
                            continue
                        # innermost loop runs over contiguous output channels
                        for ci in range(c):
                            xv = x[n, iy, ix, ci]
                            for co in range(cout):
                                out[n, oy, ox, co] += xv * w[i, j, ci, co]
    return out


def _conv2d_backward_loops(x, w, grad_out, stride, padding):
    bsz, h, wd, c = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    ho = grad_out.shape[1]
    wo = grad_out.shape[2]
    gx = np.zeros(x.shape)
    gw = np.zeros(w.shape)
    gb = np.zeros(cout)
    for n in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                for co in range(cout):
                    gb[co] += grad_out[n, oy, ox, co]
                for i in range(k):
                    iy = oy * stride + i - padding
                    if iy < 0 or iy >= h:
                        continue
                    for j in range(k):
                        ix = ox * stride + j - padding
                        if ix < 0 or ix >= wd:
                            continue
                        for ci in range(c):
                            xv = x[n, iy, ix, ci]
                            acc = 0.0
                            for co in range(cout):
                                g = grad_out[n, oy, ox, co]
                                gw[i, j, ci, co] += xv * g
                                acc += w[i, j, ci, co] * g
                            gx[n, iy, ix, ci] += acc
    return gx, gw, gb


def _bilinear_loops(img, out_h, out_w):
    h, wd, c = img.shape
    out = np.empty((out_h, out_w, c))
    for a in range(out_h):
        sy = a * (h - 1) / (out_h - 1) if out_h > 1 else (h - 1) / 2.0
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for bb in range(out_w):
            sx = bb * (wd - 1) / (out_w - 1) if out_w > 1 else (wd - 1) / 2.0
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, wd - 1)
            fx = sx - x0
            for ch in range(c):
                top = img[y0, x0, ch] * (1.0 - fx) + img[y0, x1, ch] * fx
                bot = img[y1, x0, ch] * (1.0 - fx) + img[y1, x1, ch] * fx
                out[a, bb, ch] = top * (1.0 - fy) + bot * fy
    return out


NUMPY_KERNELS = {
    "conv2d_forward": conv2d_forward_np,
    "conv2d_backward": conv2d_backward_np,
    "bilinear": bilinear_np,
}

NUMBA_KERNELS = {}
if HAVE_NUMBA:
    NUMBA_KERNELS = {
        "conv2d_forward": njit(_conv2d_forward_loops),
        "conv2d_backward": njit(_conv2d_backward_loops),
        "bilinear": njit(_bilinear_loops),
    }

USING_NUMBA = bool(NUMBA_KERNELS)
_ACTIVE = NUMBA_KERNELS if USING_NUMBA else NUMPY_KERNELS


def conv2d_forward(x, w, b, stride=1, padding=0):
    """NHWC convolution. ``w`` is (k, k, C_in, C_out); returns (B, Ho, Wo, C_out)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _ACTIVE["conv2d_forward"](x, np.ascontiguousarray(w), np.ascontiguousarray(b), stride, padding)


def conv2d_backward(x, w, grad_out, stride=1, padding=0):
    """Gradients (dx, dw, db) of :func:`conv2d_forward`."""
    return _ACTIVE["conv2d_backward"](
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(w),
        np.ascontiguousarray(grad_out, dtype=np.float64),
        stride,
        padding,
    )


def bilinear(img, out_h, out_w):
    """Align-corners bilinear resampling of an (H, W, C) image."""
    return _ACTIVE["bilinear"](np.ascontiguousarray(img, dtype=np.float64), int(out_h), int(out_w))


conv_output_size = _out_size
