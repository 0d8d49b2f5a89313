"""Hot inner loops, with a numba path and a pure-numpy path.

The backend is picked once at import time.  Set ``MADNET_NUMBA=0`` to force
the numpy implementations (useful for debugging and for the benchmark that
compares both).  Either path must give the same numbers to rounding.
"""

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _env_wants_numba():
    flag = os.environ.get("MADNET_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = _HAVE_NUMBA and _env_wants_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# radix-2 FFT over the last axis of a 2-D complex array (rows, n)
# ---------------------------------------------------------------------------


def bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _twiddles(n, dtype):
    # one table for the whole transform; stage with span m uses stride n // m
    k = np.arange(n // 2)
    return np.exp(-2j * np.pi * k / n).astype(dtype)


def fft_radix2_numpy(x):
    rows, n = x.shape
    out = x[:, bit_reverse_indices(n)]
    table = _twiddles(n, x.dtype)
    size = 2
    while size <= n:
        half = size // 2
        tw = table[:: n // size][:half]
        blocks = out.reshape(rows, n // size, size)
        even = blocks[:, :, :half]
        odd = blocks[:, :, half:] * tw
        out = np.concatenate((even + odd, even - odd), axis=2).reshape(rows, n)
        size *= 2
    return out


if USE_NUMBA:

    @njit(cache=True)
    def _fft_radix2_inplace(a, rev, table):
        rows, n = a.shape
        tmp = np.empty(n, dtype=a.dtype)
        for r in range(rows):
            for i in range(n):
                tmp[i] = a[r, rev[i]]
            for i in range(n):
                a[r, i] = tmp[i]
        size = 2
        while size <= n:
            half = size // 2
            stride = n // size
            for r in range(rows):
                for start in range(0, n, size):
                    for k in range(half):
                        w = table[k * stride]
                        u = a[r, start + k]
                        v = a[r, start + k + half] * w
                        a[r, start + k] = u + v
                        a[r, start + k + half] = u - v
            size *= 2

    def fft_radix2(x):
        n = x.shape[1]
        a = np.ascontiguousarray(x).copy()
        _fft_radix2_inplace(a, bit_reverse_indices(n), _twiddles(n, x.dtype))
        return a

else:
    fft_radix2 = fft_radix2_numpy


# ---------------------------------------------------------------------------
# depthwise 3x3-style convolution (groups == channels), stride 1
# ---------------------------------------------------------------------------


def depthwise_forward_numpy(xp, w, out_h, out_w):
    """``xp`` is already padded: (N, C, Hp, Wp); ``w`` is (C, k, k)."""
    n, c = xp.shape[:2]
    k = w.shape[-1]
    out = np.zeros((n, c, out_h, out_w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + out_h, j : j + out_w] * w[None, :, i, j, None, None]
    return out


def depthwise_backward_numpy(xp, w, g):
    """Returns (grad wrt padded input, grad wrt weight)."""
    k = w.shape[-1]
    out_h, out_w = g.shape[2:]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            win = xp[:, :, i : i + out_h, j : j + out_w]
            gw[:, i, j] = np.einsum("nchw,nchw->c", win, g)
            gxp[:, :, i : i + out_h, j : j + out_w] += g * w[None, :, i, j, None, None]
    return gxp, gw


if USE_NUMBA:

    @njit(cache=True)
    def _dw_forward(xp, w, out):
        n, c, oh, ow = out.shape
        k = w.shape[2]
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        acc = 0.0
                        for i in range(k):
                            for j in range(k):
                                acc += xp[b, ch, y + i, x + j] * w[ch, i, j]
                        out[b, ch, y, x] = acc

    @njit(cache=True)
    def _dw_backward(xp, w, g, gxp, gw):
        n, c, oh, ow = g.shape
        k = w.shape[2]
        for b in range(n):
            for ch in range(c):
                for y in range(oh):
                    for x in range(ow):
                        gv = g[b, ch, y, x]
                        if gv == 0.0:
                            continue
                        for i in range(k):
                            for j in range(k):
                                gw[ch, i, j] += xp[b, ch, y + i, x + j] * gv
                                gxp[b, ch, y + i, x + j] += w[ch, i, j] * gv

    def depthwise_forward(xp, w, out_h, out_w):
        out = np.empty((xp.shape[0], xp.shape[1], out_h, out_w), dtype=xp.dtype)
        _dw_forward(np.ascontiguousarray(xp), np.ascontiguousarray(w), out)
        return out

    def depthwise_backward(xp, w, g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        _dw_backward(
            np.ascontiguousarray(xp), np.ascontiguousarray(w), np.ascontiguousarray(g), gxp, gw
        )
        return gxp, gw

else:
    depthwise_forward = depthwise_forward_numpy
    depthwise_backward = depthwise_backward_numpy
