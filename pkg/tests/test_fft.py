import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from madnet import _kernels
from madnet import tensor as T
from madnet.fft import (
    Spectrum,
    dft_last_axis,
    fft2,
    fftshift_coords,
    frequency_offsets,
    hermitian_error,
    ifft2,
    transform2,
)
from madnet.gradcheck import grad_check
from madnet.tensor import ContractError, Tensor

from conftest import SEEDS, leaf


def naive_dft2(x):
    """O((HW)^2) orthonormal DFT, straight from the definition."""
    h, w = x.shape
    u = np.arange(h)[:, None, None, None]
    v = np.arange(w)[None, :, None, None]
    m = np.arange(h)[None, None, :, None]
    n = np.arange(w)[None, None, None, :]
    kernel = np.exp(-2j * np.pi * (u * m / h + v * n / w))
    return (kernel * x[None, None]).sum(axis=(2, 3)) / np.sqrt(h * w)


def spec(x):
    return fft2(Tensor(x)).complex()


def test_matches_naive_oracle_12x10(rng):
    x = rng.standard_normal((12, 10))
    assert np.max(np.abs(spec(x[None, None])[0, 0] - naive_dft2(x))) <= 1e-10


@pytest.mark.parametrize("shape", [(1, 1), (2, 3), (7, 5), (16, 16), (5, 32), (33, 17)])
def test_matches_naive_oracle_odd_and_pow2(shape, rng):
    x = rng.standard_normal(shape)
    assert np.max(np.abs(spec(x[None, None])[0, 0] - naive_dft2(x))) <= 1e-10


def test_delta_gives_flat_spectrum():
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, 0, 0] = 1.0
    np.testing.assert_allclose(spec(x), 0.25, atol=1e-15)


def test_constant_image_concentrates_at_dc():
    s = spec(np.full((1, 1, 8, 8), 0.7))
    assert s[0, 0, 0, 0] == pytest.approx(0.7 * 8)
    s[0, 0, 0, 0] = 0
    assert np.max(np.abs(s)) <= 1e-14


def test_dc_only_inverse_is_constant():
    re = np.zeros((1, 1, 4, 4))
    re[..., 0, 0] = 2.0
    out = ifft2(Spectrum(Tensor(re), Tensor(np.zeros_like(re)))).data
    np.testing.assert_allclose(out, 0.5, atol=1e-15)


@pytest.mark.parametrize("shape", [(16, 16), (12, 10), (9, 7)])
def test_roundtrip(shape, rng):
    x = rng.standard_normal((2, 3) + shape)
    back = ifft2(fft2(Tensor(x))).data
    assert np.max(np.abs(back - x)) <= 1e-10
    residue = transform2(spec(x), inverse=True).imag
    assert np.max(np.abs(residue)) <= 1e-10


def test_parseval(rng):
    x = rng.standard_normal((1, 2, 12, 10))
    e_space = np.sum(x**2)
    e_freq = np.sum(np.abs(spec(x)) ** 2)
    assert abs(e_space - e_freq) / e_space <= 1e-9


def test_orthonormal_inner_product(rng):
    x, y = rng.standard_normal((2, 1, 1, 8, 6))
    lhs = np.vdot(spec(y), spec(x))
    assert abs(lhs - np.vdot(y, x)) <= 1e-9 * abs(np.vdot(y, x))


def test_linearity(rng):
    x, y = rng.standard_normal((2, 1, 1, 6, 10))
    a, b = 1.7, -0.4
    np.testing.assert_allclose(spec(a * x + b * y), a * spec(x) + b * spec(y), atol=1e-10)


@pytest.mark.parametrize("seed", SEEDS)
def test_hermitian_symmetry(seed):
    x = np.random.default_rng(seed).standard_normal((1, 1, 6, 9))
    assert hermitian_error(fft2(Tensor(x))) <= 1e-9


def test_agrees_with_numpy_fft(rng):
    x = rng.standard_normal((2, 3, 20, 24))
    np.testing.assert_allclose(spec(x), np.fft.fft2(x, norm="ortho"), atol=1e-12)


def test_inverse_last_axis_unnormalised(rng):
    z = rng.standard_normal((3, 11)) + 1j * rng.standard_normal((3, 11))
    np.testing.assert_allclose(dft_last_axis(dft_last_axis(z), inverse=True), 11 * z, atol=1e-11)


def test_radix2_backends_agree(rng):
    z = rng.standard_normal((4, 64)) + 1j * rng.standard_normal((4, 64))
    np.testing.assert_allclose(_kernels.fft_radix2_numpy(z), np.fft.fft(z, axis=-1), atol=1e-11)
    np.testing.assert_allclose(_kernels.fft_radix2(z), np.fft.fft(z, axis=-1), atol=1e-11)


@pytest.mark.parametrize("seed", SEEDS)
def test_fft2_gradient(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 1, 2, 4, 6)
    wr = Tensor(rng.standard_normal(x.shape))
    wi = Tensor(rng.standard_normal(x.shape))

    def f(x):
        s = fft2(x)
        return T.tsum(T.mul(s.re, wr)) + T.tsum(T.mul(s.im, wi))

    assert grad_check(f, [x]) <= 1e-5


def test_gradient_of_real_sum(rng):
    # linear in x, so the larger step costs no truncation error and cuts roundoff
    x = leaf(rng, 1, 1, 5, 4)
    assert grad_check(lambda x: T.tsum(fft2(x).re), [x], h=1e-4) <= 1e-5


@pytest.mark.parametrize("seed", SEEDS)
def test_ifft2_gradient(seed):
    rng = np.random.default_rng(seed)
    re, im = leaf(rng, 1, 1, 4, 5), leaf(rng, 1, 1, 4, 5)
    w = Tensor(rng.standard_normal(re.shape))
    assert grad_check(lambda a, b: T.tsum(T.mul(ifft2(Spectrum(a, b)), w)), [re, im]) <= 1e-4


def test_float32_path(rng):
    x = rng.standard_normal((1, 1, 8, 12)).astype(np.float32)
    s = fft2(Tensor(x))
    assert s.re.dtype == np.float32
    np.testing.assert_allclose(s.complex(), np.fft.fft2(x, norm="ortho"), atol=1e-5)


def test_spectrum_shape_mismatch():
    with pytest.raises(ContractError):
        Spectrum(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))


def test_frequency_offsets_follow_fftfreq():
    for n in range(1, 12):
        np.testing.assert_array_equal(frequency_offsets(n), np.round(np.fft.fftfreq(n) * n).astype(int))


def test_fftshift_coords():
    du, dv = fftshift_coords(4, 4)
    assert du[2, 2] == 0 and dv[2, 2] == 0
    du, dv = fftshift_coords(1, 1)
    assert du.shape == (1, 1) and du[0, 0] == 0 and dv[0, 0] == 0
    with pytest.raises(ContractError):
        fftshift_coords(0, 3)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 8])
def test_fftshift_offsets_symmetric_except_nyquist(n):
    du, _ = fftshift_coords(n, 1)
    vals = sorted(du[:, 0].tolist())
    if n % 2 == 0:
        assert vals.count(-(n // 2)) == 1
        vals.remove(-(n // 2))
    assert sorted(-v for v in vals) == vals


@settings(max_examples=30, deadline=None)
@given(
    hnp.arrays(
        np.float64,
        st.tuples(st.integers(1, 9), st.integers(1, 9)),
        elements=st.floats(-5, 5, allow_nan=False),
    )
)
def test_roundtrip_property(x):
    x = x[None, None]
    assert np.max(np.abs(ifft2(fft2(Tensor(x))).data - x), initial=0.0) <= 1e-10
