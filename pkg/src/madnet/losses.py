"""Training objectives and image-quality metrics."""

import math
from dataclasses import dataclass, field

import numpy as np

from .fft import fft2
from .tensor import ContractError, hypot, scale, sqrt, square, sub, tsum


@dataclass
class LossConfig:
    scale_weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    charbonnier_eps: float = 1e-3
    use_msl: bool = True
    use_mfl: bool = True

    def __post_init__(self):
        self.scale_weights = [float(a) for a in self.scale_weights]
        if any(a < 0 for a in self.scale_weights):
            raise ValueError("scale weights must be non-negative")
        if self.charbonnier_eps <= 0:
            raise ValueError("charbonnier_eps must be positive")


def _check_lists(preds, targets, weights):
    if len(preds) != len(targets):
        raise ContractError(f"{len(preds)} predictions vs {len(targets)} targets")
    if len(weights) < len(preds):
        raise ContractError(f"{len(weights)} scale weights for {len(preds)} scales")
    for i, (p, t) in enumerate(zip(preds, targets)):
        if p.shape != t.shape:
            raise ContractError(f"scale {i}: prediction {p.shape} vs target {t.shape}")


def _weighted_sum(terms):
    total = None
    for alpha, term in terms:
        term = scale(term, alpha)
        total = term if total is None else total + term
    return total


def charbonnier_multiscale(preds, targets, cfg):
    """sum_s alpha_s * mean(sqrt((r - t)^2 + eps^2))."""
    _check_lists(preds, targets, cfg.scale_weights)
    eps2 = cfg.charbonnier_eps**2
    terms = []
    for alpha, r, t in zip(cfg.scale_weights, preds, targets):
        d = sub(r, t)
        terms.append((alpha / d.size, tsum(sqrt(square(d) + eps2))))
    return _weighted_sum(terms)


def frequency_loss_multiscale(preds, targets, cfg):
    """sum_s alpha_s * (1/N_s) * sum over bins of |F(r) - F(t)|.

    ``F`` is the orthonormal 2-D DFT per image and channel; by linearity the
    spectral difference is taken as the spectrum of the spatial difference.
    """
    _check_lists(preds, targets, cfg.scale_weights)
    terms = []
    for alpha, r, t in zip(cfg.scale_weights, preds, targets):
        s = fft2(sub(r, t))
        terms.append((alpha / r.size, tsum(hypot(s.re, s.im))))
    return _weighted_sum(terms)


@dataclass
class LossBreakdown:
    total: object
    charbonnier: object
    frequency: object


def total_loss(preds, targets, cfg, breakdown=False):
    """Charbonnier term plus frequency term.

    Without multi-scale spatial loss the Charbonnier term is kept at scale 0
    only; without the multi-scale frequency loss the frequency term is
    dropped.
    """
    preds, targets = list(preds), list(targets)
    if cfg.use_msl:
        lc = charbonnier_multiscale(preds, targets, cfg)
        active = cfg.scale_weights[: len(preds)]
    else:
        lc = charbonnier_multiscale(preds[:1], targets[:1], cfg)
        active = cfg.scale_weights[:1]
    lf = frequency_loss_multiscale(preds, targets, cfg) if cfg.use_mfl else None
    if cfg.use_mfl:
        active = active + cfg.scale_weights[: len(preds)]
    if not any(a > 0 for a in active):
        raise ValueError("loss configuration leaves no active term (all weights zero)")
    total = lc if lf is None else lc + lf
    if breakdown:
        return LossBreakdown(total, lc, lf)
    return total


# ---------------------------------------------------------------------------
# metrics (plain numpy; inputs are arrays or tensors in [0, 1])
# ---------------------------------------------------------------------------


def _arr(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def mse(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ContractError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def format_db(value):
    return "inf" if math.isinf(value) else f"{value:.2f}"


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' correlation of a 2-D image with 1-D window ``g``."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def _as_planes(x):
    """Turn HxW, CxHxW, HxWxC (C <= 4 trailing) or NxCxHxW into a list of 2-D planes."""
    if x.ndim == 2:
        return [x]
    if x.ndim == 3:
        if x.shape[-1] in (1, 3, 4) and x.shape[0] not in (1, 3, 4):
            x = np.moveaxis(x, -1, 0)
        return list(x)
    if x.ndim == 4:
        return [p for img in x for p in img]
    raise ContractError(f"ssim: unsupported rank {x.ndim}")


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean SSIM over Gaussian-weighted windows, averaged across channels."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ContractError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    pa, pb = _as_planes(a), _as_planes(b)
    h, w = pa[0].shape
    if h < window or w < window:
        raise ValueError(f"ssim: image {h}x{w} is smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = []
    for x, y in zip(pa, pb):
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
