"""Orthonormal 2-D DFT pair on (N, C, H, W) tensors.

Power-of-two lengths go through iterative radix-2 Cooley-Tukey; any other
length goes through Bluestein's chirp-z reformulation on top of it.  Both
directions carry 1/sqrt(H*W), so the pair is unitary and Parseval holds.
Spectra are stored DC-at-origin (numpy's ``fft`` layout).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .tensor import ContractError, Tensor, make_node


def _complex_dtype(real_dtype):
    return np.complex64 if np.dtype(real_dtype) == np.float32 else np.complex128


def _is_pow2(n):
    return n & (n - 1) == 0


@lru_cache(maxsize=64)
def _bluestein_plan(n, dtype_name):
    dtype = np.dtype(dtype_name)
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase small and exact for large n
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros((1, m), dtype=np.complex128)
    b[0, :n] = np.conj(chirp)
    b[0, m - n + 1 :] = np.conj(chirp[1:])[::-1]
    fb = _kernels.fft_radix2(b.astype(dtype))
    return m, chirp.astype(dtype), fb


def _fft_rows(a):
    """Unnormalised forward DFT along the last axis of a 2-D complex array."""
    n = a.shape[1]
    if n == 1:
        return a.copy()
    if _is_pow2(n):
        return _kernels.fft_radix2(a)
    m, chirp, fb = _bluestein_plan(n, a.dtype.name)
    buf = np.zeros((a.shape[0], m), dtype=a.dtype)
    buf[:, :n] = a * chirp
    conv = _kernels.fft_radix2(buf) * fb
    # inverse radix-2 via conjugation
    conv = np.conj(_kernels.fft_radix2(np.conj(conv))) / m
    return conv[:, :n] * chirp


def dft_last_axis(a, inverse=False):
    """Unnormalised DFT along the last axis of an arbitrary-rank complex array."""
    shape = a.shape
    rows = np.ascontiguousarray(a).reshape(-1, shape[-1])
    if inverse:
        out = np.conj(_fft_rows(np.conj(rows)))
    else:
        out = _fft_rows(rows)
    return out.reshape(shape)


def transform2(z, inverse=False):
    """Orthonormal 2-D DFT over the last two axes of a complex array."""
    h, w = z.shape[-2:]
    out = dft_last_axis(z, inverse)
    out = np.swapaxes(dft_last_axis(np.swapaxes(out, -1, -2), inverse), -1, -2)
    return out * z.real.dtype.type(1.0 / np.sqrt(h * w))


@dataclass
class Spectrum:
    """Complex spectrum of a real (N, C, H, W) signal, DC at index (0, 0)."""

    re: Tensor
    im: Tensor
    dc_at_origin: bool = True

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ContractError(f"spectrum parts differ in shape: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape

    def complex(self):
        return self.re.data + 1j * self.im.data


def _to_complex(re, im=None):
    cd = _complex_dtype(re.dtype)
    z = re.data.astype(cd)
    if im is not None:
        z += 1j * im.data
    return z


def fft2(x):
    """Forward transform of a real tensor, scaled by 1/sqrt(HW)."""
    if x.ndim < 2:
        raise ContractError("fft2 needs at least two axes")
    out = transform2(_to_complex(x))
    packed = np.stack([out.real, out.imag]).astype(x.dtype)

    def backward(g):
        back = transform2(g[0] + 1j * g[1], inverse=True)
        return (back.real.astype(x.dtype),)

    node = make_node(packed, (x,), backward, "fft2")
    return Spectrum(node[0], node[1])


def fft2_complex(s):
    """Forward transform of a complex spectrum-like pair (used by tests and tools)."""
    return _dft2_pair(s.re, s.im, inverse=False)


def ifft2_complex(s):
    return _dft2_pair(s.re, s.im, inverse=True)


def _dft2_pair(re, im, inverse):
    out = transform2(_to_complex(re, im), inverse)
    packed = np.stack([out.real, out.imag]).astype(re.dtype)

    def backward(g):
        back = transform2(g[0] + 1j * g[1], inverse=not inverse)
        return back.real.astype(re.dtype), back.imag.astype(re.dtype)

    node = make_node(packed, (re, im), backward, "ifft2" if inverse else "fft2")
    return Spectrum(node[0], node[1])


def ifft2(s):
    """Inverse transform, keeping the real part (the imaginary residue is dropped)."""
    re, im = s.re, s.im
    out = transform2(_to_complex(re, im), inverse=True).real.astype(re.dtype)

    def backward(g):
        back = transform2(g.astype(_complex_dtype(re.dtype)))
        return back.real.astype(re.dtype), back.imag.astype(re.dtype)

    return make_node(out, (re, im), backward, "ifft2")


def frequency_offsets(n):
    """Signed frequency of each storage index 0..n-1 (DC-at-origin layout)."""
    k = np.arange(n)
    return np.where(k < (n + 1) // 2, k, k - n)


def fftshift_coords(h, w):
    """Integer offsets (du, dv) from DC for each bin of the centred layout.

    The centred grid puts DC at index (h // 2, w // 2); offsets run from
    -(h // 2) to (h - 1) // 2 along each axis.
    """
    if h < 1 or w < 1:
        raise ContractError(f"fftshift_coords needs positive extents, got {h}x{w}")
    du = np.arange(h) - h // 2
    dv = np.arange(w) - w // 2
    return np.meshgrid(du, dv, indexing="ij")


def hermitian_error(s):
    """Max |S(u, v) - conj(S(-u, -v))| over all bins."""
    z = s.complex()
    flipped = np.roll(np.flip(z, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))
    return float(np.max(np.abs(z - np.conj(flipped))))
