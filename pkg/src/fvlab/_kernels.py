"""Hot convolution kernels: im2col / col2im.

Two interchangeable backends are provided. The numba backend compiles the
gather/scatter loops with ``@njit``; the numpy backend uses strided views and
slice accumulation. Select with the ``FVLAB_KERNELS`` environment variable
(``numba`` or ``numpy``); the default is numba when it imports.
"""
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def _requested_backend():
    name = os.environ.get("FVLAB_KERNELS", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"FVLAB_KERNELS must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        return "numpy"
    return name


BACKEND = _requested_backend()


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------------
# numpy backend
# --------------------------------------------------------------------------

def im2col_numpy(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, ho, wo, kh, kw)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im_numpy(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


# --------------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _im2col_nb(x, kh, kw, stride, pad, ho, wo):
        n, c, h, w = x.shape
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
        cols = np.empty((n * ho * wo, c * kh * kw), dtype=x.dtype)
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    row = (b * ho + oy) * wo + ox
                    col = 0
                    y0 = oy * stride
                    x0 = ox * stride
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, col] = xp[b, ch, y0 + i, x0 + j]
                                col += 1
        return cols

    @njit(cache=True)
    def _col2im_nb(cols, n, c, h, w, kh, kw, stride, pad, ho, wo):
        out = np.zeros((n, c, h, w), dtype=cols.dtype)
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    row = (b * ho + oy) * wo + ox
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            yy = oy * stride + i - pad
                            for j in range(kw):
                                xx = ox * stride + j - pad
                                if 0 <= yy < h and 0 <= xx < w:
                                    out[b, ch, yy, xx] += cols[row, col]
                                col += 1
        return out


def im2col_numba(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    return _im2col_nb(np.ascontiguousarray(x), kh, kw, stride, pad, ho, wo)


def col2im_numba(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    return _col2im_nb(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, pad, ho, wo)


_BACKENDS = {
    "numpy": (im2col_numpy, col2im_numpy),
    "numba": (im2col_numba, col2im_numba) if HAS_NUMBA else (im2col_numpy, col2im_numpy),
}


def im2col(x, kh, kw, stride, pad, backend=None):
    return _BACKENDS[backend or BACKEND][0](x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad, backend=None):
    return _BACKENDS[backend or BACKEND][1](cols, x_shape, kh, kw, stride, pad)


def conv2d_forward(x, w, stride=1, pad=0, backend=None):
    """Cross-correlation of ``x`` (N,C,H,W) with ``w`` (O,C,kh,kw)."""
    n = x.shape[0]
    o, c, kh, kw = w.shape
    ho = conv_out_size(x.shape[2], kh, stride, pad)
    wo = conv_out_size(x.shape[3], kw, stride, pad)
    cols = im2col(x, kh, kw, stride, pad, backend)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(gout, x, w, stride=1, pad=0, need_x=True, need_w=True, backend=None):
    """Return (grad_x, grad_w) for ``conv2d_forward``; skipped parts are None."""
    o, c, kh, kw = w.shape
    g2 = gout.transpose(0, 2, 3, 1).reshape(-1, o)
    gx = gw = None
    if need_w:
        cols = im2col(x, kh, kw, stride, pad, backend)
        gw = (g2.T @ cols).reshape(w.shape)
    if need_x:
        gcols = g2 @ w.reshape(o, -1)
        gx = col2im(gcols, x.shape, kh, kw, stride, pad, backend)
    return gx, gw
