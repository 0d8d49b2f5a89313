"""Convolution and resampling ops on (N, C, H, W) tensors."""

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .tensor import ContractError, make_node


def conv_out_extent(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """2-D cross-correlation.  Output extents use floor division, as usual."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if cin % groups:
        raise ContractError(f"conv2d: input channels (axis 1) = {cin} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ContractError(
            f"conv2d: weight axis 1 has {cin_g} channels, expected {cin // groups} (input axis 1 / groups)"
        )
    if cout % groups:
        raise ContractError(f"conv2d: output channels (weight axis 0) = {cout} not divisible by groups")
    if bias is not None and bias.shape != (cout,):
        raise ContractError(f"conv2d: bias has shape {bias.shape}, expected ({cout},)")
    oh = conv_out_extent(h, kh, stride, padding)
    ow = conv_out_extent(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ContractError(f"conv2d: kernel {kh}x{kw} does not fit spatial extent {h}x{w}")

    if kh == kw == 1 and stride == 1 and padding == 0 and groups == 1:
        out, back = _pointwise(x, weight)
    elif groups == cin == cout and stride == 1:
        out, back = _depthwise(x, weight, padding, oh, ow)
    else:
        out, back = _im2col(x, weight, stride, padding, groups, oh, ow)

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx, gw = back(g)
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gw, gb

    return make_node(out, parents, backward, "conv2d")


def _pointwise(x, weight):
    n, cin, h, w = x.shape
    wm = weight.data.reshape(weight.shape[0], cin)
    flat = x.data.reshape(n, cin, h * w)
    out = np.matmul(wm, flat).reshape(n, -1, h, w)

    def back(g):
        gf = g.reshape(n, -1, h * w)
        gx = np.matmul(wm.T, gf).reshape(x.shape) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.einsum("nop,nip->oi", gf, flat).reshape(weight.shape)
        return gx, gw

    return out, back


def _pad(a, padding):
    if padding == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _depthwise(x, weight, padding, oh, ow):
    xp = _pad(x.data, padding)
    wk = weight.data[:, 0]
    out = _kernels.depthwise_forward(xp, wk, oh, ow)

    def back(g):
        gxp, gw = _kernels.depthwise_backward(xp, wk, g)
        gx = None
        if x.requires_grad:
            h, w = x.shape[2:]
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        return gx, gw[:, None] if weight.requires_grad else None

    return out, back


def _im2col(x, weight, stride, padding, groups, oh, ow):
    n, cin = x.shape[:2]
    cout, cin_g, kh, kw = weight.shape
    cout_g = cout // groups
    xp = _pad(x.data, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols, mats = [], []
    out = np.empty((n, cout, oh, ow), dtype=x.dtype)
    for gi in range(groups):
        c = win[:, gi * cin_g : (gi + 1) * cin_g].transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, -1)
        wm = weight.data[gi * cout_g : (gi + 1) * cout_g].reshape(cout_g, -1)
        out[:, gi * cout_g : (gi + 1) * cout_g] = (c @ wm.T).reshape(n, oh, ow, cout_g).transpose(0, 3, 1, 2)
        cols.append(c)
        mats.append(wm)

    def back(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.empty_like(weight.data) if weight.requires_grad else None
        for gi in range(groups):
            gm = g[:, gi * cout_g : (gi + 1) * cout_g].transpose(0, 2, 3, 1).reshape(n * oh * ow, cout_g)
            if gw is not None:
                gw[gi * cout_g : (gi + 1) * cout_g] = (gm.T @ cols[gi]).reshape(cout_g, cin_g, kh, kw)
            if gxp is not None:
                gc = (gm @ mats[gi]).reshape(n, oh, ow, cin_g, kh, kw)
                dst = gxp[:, gi * cin_g : (gi + 1) * cin_g]
                for i in range(kh):
                    for j in range(kw):
                        dst[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gc[
                            :, :, :, :, i, j
                        ].transpose(0, 3, 1, 2)
        gx = None
        if gxp is not None:
            h, w = x.shape[2:]
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        return gx, gw

    return out, back


@lru_cache(maxsize=256)
def _interp_matrix(n_in, n_out):
    """Row d holds the bilinear weights for output index d (align_corners=False)."""
    a = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for d in range(n_out):
        src = max((d + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        a[d, i0] += 1.0 - frac
        a[d, i1] += frac
    a.setflags(write=False)
    return a


def interp_matrix(n_in, n_out, dtype=np.float64):
    return _interp_matrix(n_in, n_out).astype(dtype, copy=False)


def resize_bilinear(x, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ContractError(f"resize_bilinear: target size must be positive, got {out_h}x{out_w}")
    if x.ndim != 4:
        raise ContractError(f"resize_bilinear expects (N, C, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    ah = interp_matrix(h, out_h, x.dtype)
    aw = interp_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def backward(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return make_node(out, (x,), backward, "resize_bilinear")


def pyramid(x, levels):
    """Successive 2x bilinear reductions: [x, x/2, x/4, ...] (``levels`` entries).

    Each step is an exact 2x2 average, so level i is the 2^i x 2^i box mean
    of level 0.
    """
    if levels < 1:
        raise ContractError(f"pyramid: levels must be >= 1, got {levels}")
    h, w = x.shape[2:]
    f = 1 << (levels - 1)
    if h % f or w % f:
        raise ContractError(
            f"pyramid: spatial extents {h}x{w} must be divisible by 2^(levels-1) = {f}"
        )
    out = [x]
    for _ in range(levels - 1):
        h, w = h // 2, w // 2
        out.append(resize_bilinear(out[-1], h, w))
    return out
