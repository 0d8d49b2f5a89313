"""The two motivating experiments: noise vs. scale, and low/high band swaps."""

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .data import add_awgn
from .fft import frequency_offsets, transform2
from .losses import mse, psnr, ssim
from .tensor import Tensor


def _chw(img):
    return np.ascontiguousarray(np.asarray(img, dtype=np.float64).transpose(2, 0, 1))


def downsample_levels(img, levels):
    """Pyramid of an (H, W, C) image using the network's input operator."""
    h, w = img.shape[:2]
    f = 2 ** (levels - 1)
    if h // f < 1 or w // f < 1:
        raise ValueError(f"image {h}x{w} too small for {levels} levels")
    h, w = (h // f) * f, (w // f) * f
    t = Tensor(_chw(img[:h, :w])[None])
    return [p.data[0].transpose(1, 2, 0) for p in F.pyramid(t, levels)]


@dataclass
class ScaleRow:
    scale: float
    mse: float
    psnr: float
    ssim: float


def scale_analysis(clean, sigma, levels=4, seed=0, noisy=None):
    """MSE/PSNR/SSIM between clean and noisy images reduced to each scale.

    Both images are reduced by the same operator.  Raises if the coarsest
    level is smaller than the SSIM window.
    """
    if noisy is None:
        noisy = add_awgn(clean, sigma, seed)
    h, w = clean.shape[:2]
    coarse = min(h, w) >> (levels - 1)
    if coarse < 11:
        raise ValueError(
            f"image {h}x{w} too small: coarsest level would be {coarse} px, SSIM needs 11"
        )
    rows = []
    for i, (c, n) in enumerate(zip(downsample_levels(clean, levels), downsample_levels(noisy, levels))):
        rows.append(ScaleRow(0.5**i, mse(n, c), psnr(n, c), ssim(n, c)))
    return rows


def trend_ok(rows):
    """PSNR strictly rises from scale 1 to 0.5 and never falls after that."""
    p = [r.psnr for r in rows]
    if len(p) < 2:
        return True
    return p[1] > p[0] and all(b >= a for a, b in zip(p[1:], p[2:]))


def lowpass_rect(h, w, ratio):
    """Binary centred rectangle (DC-at-origin layout), half-extent ``ratio * floor(n/2)``."""
    rh = ratio * (h // 2)
    rw = ratio * (w // 2)
    mh = np.abs(frequency_offsets(h)) <= rh
    mw = np.abs(frequency_offsets(w)) <= rw
    return np.outer(mh, mw)


@dataclass
class SwapResult:
    clean_spec: np.ndarray
    degraded_spec: np.ndarray
    hybrid_high_spec: np.ndarray  # clean lows + degraded highs
    hybrid_low_spec: np.ndarray  # degraded lows + clean highs
    hybrid_high_noise: np.ndarray  # (H, W, C) image
    hybrid_low_noise: np.ndarray
    mask: np.ndarray

    def report(self, clean, degraded):
        def energy(s):
            return float(np.sum(np.abs(s) ** 2))

        return {
            "psnr_degraded": psnr(degraded, clean),
            "psnr_hybrid_high_freq_noise": psnr(self.hybrid_high_noise, clean),
            "psnr_hybrid_low_freq_noise": psnr(self.hybrid_low_noise, clean),
            "low_band_bins": int(self.mask.sum()),
            "energy_originals": energy(self.clean_spec) + energy(self.degraded_spec),
            "energy_hybrids": energy(self.hybrid_high_spec) + energy(self.hybrid_low_spec),
        }


def frequency_swap(clean, degraded, ratio=0.125):
    """Swap the centred low-frequency rectangle between two (H, W, C) images."""
    clean = np.asarray(clean, dtype=np.float64)
    degraded = np.asarray(degraded, dtype=np.float64)
    if clean.shape != degraded.shape:
        raise ValueError(f"image extents differ: {clean.shape} vs {degraded.shape}")
    if not 0 <= ratio <= 1:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    sc = transform2(_chw(clean).astype(np.complex128))
    sd = transform2(_chw(degraded).astype(np.complex128))
    m = lowpass_rect(clean.shape[0], clean.shape[1], ratio)
    h1 = np.where(m, sc, sd)
    h2 = np.where(m, sd, sc)

    def back(s):
        return transform2(s, inverse=True).real.transpose(1, 2, 0)

    return SwapResult(sc, sd, h1, h2, back(h1), back(h2), m)
