"""Building blocks of the dual-domain denoiser.

AFEB splits features into low/high frequency bands with a learnable
rectangular mask and refines each band in the spatial domain; TSA is
channel-wise (transposed) self-attention; ASFU chains the two; DDML wraps
ASFU and a gated feed-forward network with layer norms and residuals; GFFB
fuses all encoder scales into one global feature and refines each scale
against it with cross attention.
"""

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .fft import Spectrum, fft2, frequency_offsets, ifft2
from .nn import Conv2d, LayerNorm2d, Module, Parameter, depthwise
from .tensor import (
    ContractError,
    add,
    bmul,
    concat,
    gelu,
    l2_normalize,
    make_node,
    matmul,
    neg,
    reciprocal,
    relu,
    reshape,
    softmax,
    split,
    transpose,
)

MASK_TEMPERATURE = 10.0


@dataclass(frozen=True)
class BlockToggles:
    """Ablation switches for the dual-domain layer.

    ``use_separation`` / ``use_enhancement`` describe the AFEB variant.  When
    either is cleared an AFEB is still built in its reduced form even if
    ``use_afeb`` is off; this mirrors the "AFEB w/o Sep" / "AFEB w/o Enh"
    ablation rows, which clear the full-AFEB flag while keeping a reduced one.
    """

    use_aseb: bool = True
    use_afeb: bool = True
    use_separation: bool = True
    use_enhancement: bool = True

    @property
    def afeb_active(self):
        return self.use_afeb or not (self.use_separation and self.use_enhancement)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# adaptive frequency mask
# ---------------------------------------------------------------------------


class FrequencyMask(Module):
    """Centred rectangular low-pass mask with learnable half-width ratios.

    Half-widths are ``sigmoid(theta) * floor(n / 2)`` along each axis, so the
    rectangle scales with the input and always contains DC.  The forward mask
    is binary; the backward pass uses a sigmoid boundary of temperature
    ``tau`` (straight-through) so theta receives gradient.
    """

    def __init__(self, dtype=np.float32, tau=MASK_TEMPERATURE):
        self.tau = tau
        self.theta_h = Parameter(np.zeros(1, dtype=dtype))
        self.theta_w = Parameter(np.zeros(1, dtype=dtype))

    def radii(self, h, w):
        rh = _sigmoid(float(self.theta_h.data[0])) * (h // 2)
        rw = _sigmoid(float(self.theta_w.data[0])) * (w // 2)
        return rh, rw

    def forward(self, h, w):
        return frequency_mask(self.theta_h, self.theta_w, h, w, self.tau)


def _axis_gate(theta, n, tau):
    s = _sigmoid(theta)
    r = s * (n // 2)
    dist = np.abs(frequency_offsets(n)).astype(np.float64)
    hard = (dist <= r).astype(np.float64)
    soft = _sigmoid(tau * (r - dist))
    # d soft / d theta through r
    dsoft = tau * soft * (1.0 - soft) * s * (1.0 - s) * (n // 2)
    return hard, soft, dsoft


def frequency_mask(theta_h, theta_w, h, w, tau=MASK_TEMPERATURE):
    """Binary (h, w) mask in DC-at-origin layout, straight-through in theta."""
    hard_h, soft_h, dsoft_h = _axis_gate(float(theta_h.data[0]), h, tau)
    hard_w, soft_w, dsoft_w = _axis_gate(float(theta_w.data[0]), w, tau)
    mask = np.outer(hard_h, hard_w).astype(theta_h.dtype)

    def backward(g):
        g = g.astype(np.float64)
        gth = np.einsum("ij,i,j->", g, dsoft_h, soft_w)
        gtw = np.einsum("ij,i,j->", g, soft_h, dsoft_w)
        return (np.array([gth], dtype=theta_h.dtype), np.array([gtw], dtype=theta_w.dtype))

    return make_node(mask, (theta_h, theta_w), backward, "frequency_mask")


def adaptive_frequency_mask(s, mask_param):
    """Split a spectrum into (low, high) with low + high == s bin-exactly."""
    h, w = s.shape[-2:]
    m = mask_param(h, w)
    keep = add(neg(m), 1.0)
    low = Spectrum(bmul(s.re, m), bmul(s.im, m))
    high = Spectrum(bmul(s.re, keep), bmul(s.im, keep))
    return low, high


# ---------------------------------------------------------------------------
# transposed (channel) attention
# ---------------------------------------------------------------------------


class TransposedAttention(Module):
    """Multi-head channel attention with depthwise-conv projections.

    Q comes from the query feature; K and V from the context feature (the
    query itself for self-attention).  K and V share one pointwise and one
    depthwise conv producing 2*dim channels, split afterwards.  Logits are
    divided by a learnable per-head ``alpha``.
    """

    def __init__(self, dim, heads, rng, context_dim=None, dtype=np.float32):
        if dim % heads:
            raise ContractError(f"attention: {dim} channels not divisible by {heads} heads")
        context_dim = dim if context_dim is None else context_dim
        self.dim = dim
        self.heads = heads
        self.q_point = Conv2d(dim, dim, 1, rng=rng, dtype=dtype)
        self.q_depth = depthwise(dim, rng, dtype)
        self.kv_point = Conv2d(context_dim, 2 * dim, 1, rng=rng, dtype=dtype)
        self.kv_depth = depthwise(2 * dim, rng, dtype)
        self.alpha = Parameter(np.ones(heads, dtype=dtype))
        self.project = Conv2d(dim, dim, 1, rng=rng, dtype=dtype)

    def attention(self, query, context):
        """Return (attention weights (N, heads, c, c), values (N, heads, c, HW))."""
        if query.shape[2:] != context.shape[2:]:
            raise ContractError(
                f"attention: spatial extents differ, query {query.shape[2:]} vs context {context.shape[2:]}"
            )
        n, c, h, w = query.shape
        if c != self.dim:
            raise ContractError(f"attention: query has {c} channels, expected {self.dim}")
        q = self.q_depth(self.q_point(query))
        k, v = split(self.kv_depth(self.kv_point(context)), [c, c], axis=1)
        shape = (n, self.heads, c // self.heads, h * w)
        q = l2_normalize(reshape(q, shape), axis=-1)
        k = l2_normalize(reshape(k, shape), axis=-1)
        v = reshape(v, shape)
        logits = matmul(q, transpose(k, (0, 1, 3, 2)))
        inv_alpha = reshape(reciprocal(self.alpha), (1, self.heads, 1, 1))
        return softmax(bmul(logits, inv_alpha), axis=-1), v

    def delta(self, query, context):
        """Projected attention output, without the residual."""
        attn, v = self.attention(query, context)
        out = reshape(matmul(attn, v), query.shape)
        return self.project(out)

    def forward(self, query, context=None):
        return add(query, self.delta(query, query if context is None else context))


def tsa_forward(f, attn):
    return attn(f)


def cross_tsa_forward(query_feat, context_feat, attn):
    return attn(query_feat, context_feat)


# ---------------------------------------------------------------------------
# AFEB, GFF, ASFU, DDML
# ---------------------------------------------------------------------------


class PointwiseMLP(Module):
    def __init__(self, dim, rng, ratio=2, dtype=np.float32):
        self.fc1 = Conv2d(dim, ratio * dim, 1, rng=rng, dtype=dtype)
        self.fc2 = Conv2d(ratio * dim, dim, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))


class AFEB(Module):
    """Adaptive frequency enhancement block.

    conv3x3 + ReLU -> FFT -> mask into bands -> per band: IFFT, MLP, TSA ->
    sum of bands -> 1x1 conv + ReLU, residual onto the pre-FFT features ->
    final 1x1 merge conv, residual onto the block input.
    """

    def __init__(self, dim, heads, rng, toggles=BlockToggles(), dtype=np.float32):
        self.separate = toggles.use_separation
        self.enhance = toggles.use_enhancement
        self.conv_in = Conv2d(dim, dim, 3, rng=rng, dtype=dtype)
        if self.separate:
            self.mask = FrequencyMask(dtype=dtype)
        n_branches = 2 if self.separate else 1
        if self.enhance:
            self.mlps = [PointwiseMLP(dim, rng, dtype=dtype) for _ in range(n_branches)]
            self.attns = [TransposedAttention(dim, heads, rng, dtype=dtype) for _ in range(n_branches)]
        self.conv_mid = Conv2d(dim, dim, 1, rng=rng, dtype=dtype)
        self.conv_out = Conv2d(dim, dim, 1, rng=rng, dtype=dtype)

    def spatial_features(self, f):
        return relu(self.conv_in(f))

    def branches(self, f):
        """Per-band spatial outputs (low first) and the pre-FFT features."""
        z = self.spatial_features(f)
        spec = fft2(z)
        bands = adaptive_frequency_mask(spec, self.mask) if self.separate else (spec,)
        outs = []
        for i, band in enumerate(bands):
            y = ifft2(band)
            if self.enhance:
                y = self.attns[i](self.mlps[i](y))
            outs.append(y)
        return outs, z

    def forward(self, f):
        if f.shape[1] != self.conv_in.weight.shape[1]:
            raise ContractError(f"AFEB: input has {f.shape[1]} channels, expected {self.conv_in.weight.shape[1]}")
        outs, z = self.branches(f)
        combined = outs[0]
        for y in outs[1:]:
            combined = add(combined, y)
        h = add(relu(self.conv_mid(combined)), z)
        return add(f, self.conv_out(h))


def afeb_forward(f, afeb):
    return afeb(f)


class GFF(Module):
    """Gated feed-forward: expand, depthwise, gelu(half1) * half2, project."""

    def __init__(self, dim, rng, ratio=2.0, dtype=np.float32):
        hidden = int(round(ratio * dim))
        self.hidden = hidden
        self.project_in = Conv2d(dim, 2 * hidden, 1, rng=rng, dtype=dtype)
        self.dwconv = depthwise(2 * hidden, rng, dtype)
        self.project_out = Conv2d(hidden, dim, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        if x.shape[1] != self.project_in.weight.shape[1]:
            raise ContractError(f"GFF: input has {x.shape[1]} channels, expected {self.project_in.weight.shape[1]}")
        a, b = split(self.dwconv(self.project_in(x)), [self.hidden, self.hidden], axis=1)
        return self.project_out(gelu(a) * b)


def gff_forward(f, gff):
    return gff(f)


class ASFU(Module):
    """AFEB followed by ASEB (self TSA); a disabled stage is the identity."""

    def __init__(self, dim, heads, rng, toggles=BlockToggles(), dtype=np.float32):
        self.afeb = AFEB(dim, heads, rng, toggles, dtype) if toggles.afeb_active else None
        self.aseb = TransposedAttention(dim, heads, rng, dtype=dtype) if toggles.use_aseb else None

    def forward(self, f):
        if self.afeb is not None:
            f = self.afeb(f)
        if self.aseb is not None:
            f = self.aseb(f)
        return f


def asfu_forward(f, asfu):
    return asfu(f)


class DDML(Module):
    """out = GFF(LN(ASFU(LN(f)) + f)) + f."""

    def __init__(self, dim, heads, rng, toggles=BlockToggles(), gff_ratio=2.0, dtype=np.float32):
        self.norm1 = LayerNorm2d(dim, dtype=dtype)
        self.asfu = ASFU(dim, heads, rng, toggles, dtype)
        self.norm2 = LayerNorm2d(dim, dtype=dtype)
        self.gff = GFF(dim, rng, gff_ratio, dtype)

    def forward(self, f):
        y = add(self.asfu(self.norm1(f)), f)
        return add(self.gff(self.norm2(y)), f)


def ddml_forward(f, ddml):
    return ddml(f)


# ---------------------------------------------------------------------------
# global feature fusion
# ---------------------------------------------------------------------------


class GFFB(Module):
    """Fuse all scales into one global feature; refine each scale against it.

    Every scale is reduced to the coarsest extent and concatenated along
    channels.  Scale i is refined by cross attention (query: scale i at the
    coarse extent, context: the global feature); the attention output is
    upsampled back and added to the full-resolution feature.
    """

    def __init__(self, channels, heads, rng, dtype=np.float32):
        self.channels = list(channels)
        total = sum(self.channels)
        if len(self.channels) > 1:
            self.attns = [
                TransposedAttention(c, h, rng, context_dim=total, dtype=dtype)
                for c, h in zip(self.channels, heads)
            ]

    @property
    def global_channels(self):
        return sum(self.channels)

    def _check(self, feats):
        if len(feats) != len(self.channels):
            raise ContractError(f"GFFB: expected {len(self.channels)} scales, got {len(feats)}")
        h0, w0 = feats[0].shape[2:]
        for i, (f, c) in enumerate(zip(feats, self.channels)):
            if f.shape[1] != c or f.shape[2] * 2**i != h0 or f.shape[3] * 2**i != w0:
                raise ContractError(
                    f"GFFB: scale {i} has shape {f.shape}, expected {c} channels at {h0 >> i}x{w0 >> i}"
                )

    def global_feature(self, feats):
        levels = len(feats)
        coarse = [F.pyramid(f, levels - i)[-1] for i, f in enumerate(feats)]
        return concat(coarse, axis=1), coarse

    def forward(self, feats):
        feats = list(feats)
        self._check(feats)
        if len(feats) == 1:
            return feats
        g, coarse = self.global_feature(feats)
        out = []
        for f, q, attn in zip(feats, coarse, self.attns):
            d = attn.delta(q, g)
            out.append(add(f, F.resize_bilinear(d, f.shape[2], f.shape[3])))
        return out


def gffb_forward(scale_feats, gffb):
    return gffb(scale_feats)
