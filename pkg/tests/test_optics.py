import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flimdeconv import ComplexField, DomainError, Kernel, convolve, delta_kernel, gaussian_kernel, mirror
from flimdeconv.optics import Blur, convolve_plane

# 40-digit mpmath: 1 / sum_{x=-20..20} exp(-x^2 / 50)
CENTER_TAP_SIGMA5 = 0.07979165688795058862
# direct-sum oracle, 1D step (1.0 left of 128, 0.2 from 128), sigma 5, half-sample reflect
STEP_AT_127 = 0.63191666275518024055
STEP_AT_128 = 0.56808333724481977055


def brute_convolve_1d(f, k, boundary):
    """Plain-Python reference: out[x] = sum_j k[j] f[x - j] with explicit index folding."""
    n, r = len(f), len(k) // 2

    def fold(i):
        if boundary == "periodic":
            return i % n
        while i < 0 or i >= n:
            i = -i - 1 if i < 0 else 2 * n - i - 1
        return i

    return [sum(k[j + r] * f[fold(x - j)] for j in range(-r, r + 1)) for x in range(n)]


class TestGaussianKernel:
    @pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5, 5.0, 7.3])
    @pytest.mark.parametrize("dims", [1, 2])
    def test_normalized_and_odd(self, sigma, dims):
        k = gaussian_kernel(sigma, dims)
        assert abs(k.values.sum() - 1) < 1e-12
        assert all(n % 2 == 1 for n in k.values.shape)
        assert k.radius == int(np.ceil(4 * sigma))

    def test_delta_limit(self):
        k = gaussian_kernel(1e-3, 1)
        assert k.values[k.radius] > 1 - 1e-9

    def test_sigma5_1d(self):
        k = gaussian_kernel(5.0, 1)
        assert k.values.shape == (41,)
        assert k.values[20] == pytest.approx(CENTER_TAP_SIGMA5, rel=1e-13)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(DomainError):
            gaussian_kernel(sigma)

    def test_centrosymmetric(self):
        k = gaussian_kernel(3.0, 2)
        assert np.max(np.abs(mirror(k).values - k.values)) <= 1e-15


class TestMirror:
    def test_reversal(self):
        np.testing.assert_array_equal(mirror(Kernel([0.2, 0.3, 0.5])).values, [0.5, 0.3, 0.2])

    def test_2d_reversal(self):
        v = np.arange(9, dtype=float).reshape(3, 3) + 1
        np.testing.assert_array_equal(mirror(Kernel(v / v.sum())).values, (v / v.sum())[::-1, ::-1])

    @given(st.integers(0, 3).flatmap(
        lambda r: st.lists(st.floats(min_value=0.01, max_value=1), min_size=2 * r + 1, max_size=2 * r + 1)))
    def test_involution(self, w):
        k = Kernel(np.array(w) / sum(w))
        np.testing.assert_array_equal(mirror(mirror(k)).values, k.values)


def test_kernel_validation():
    with pytest.raises(DomainError):
        Kernel([0.5, 0.5])
    with pytest.raises(DomainError):
        Kernel([0.5, -0.1, 0.6])
    with pytest.raises(DomainError):
        Kernel([0.2, 0.2, 0.2])


def test_kernel_radius_non_square():
    assert Kernel(np.full((3, 7), 1 / 21)).radius == 3


def _field(re, im=None):
    return ComplexField(re, re if im is None else im)


class TestConvolve:
    def test_delta_is_identity_bitwise(self):
        rng = np.random.default_rng(1)
        f = _field(rng.random((16, 16)), rng.random((16, 16)))
        out = convolve(f, delta_kernel(2), engine="direct")
        assert np.array_equal(out.re, f.re) and np.array_equal(out.im, f.im)

    @pytest.mark.parametrize("boundary", ["reflect", "periodic"])
    @pytest.mark.parametrize("engine", ["direct", "fft"])
    def test_constant_field_preserved(self, boundary, engine):
        f = _field(np.full((24, 30), 0.7))
        out = convolve(f, gaussian_kernel(2.0, 2), boundary, engine)
        np.testing.assert_allclose(out.re, 0.7, atol=1e-12)

    @pytest.mark.parametrize("engine", ["direct", "fft"])
    def test_step_matches_brute_force(self, engine):
        x = np.arange(256)
        step = np.where(x < 128, 1.0, 0.2)
        out = convolve_plane(step, gaussian_kernel(5.0, 1), "reflect", engine)
        assert out[128] == pytest.approx(STEP_AT_128, abs=1e-6)
        assert out[127] == pytest.approx(STEP_AT_127, abs=1e-6)
        # the interface value midway between the two samples is the mean level
        assert 0.5 * (out[127] + out[128]) == pytest.approx(0.6, abs=1e-6)

    @pytest.mark.parametrize("boundary", ["reflect", "periodic"])
    def test_1d_against_python_oracle(self, boundary):
        rng = np.random.default_rng(7)
        f = rng.random(23)
        k = gaussian_kernel(1.7, 1)
        expected = brute_convolve_1d(list(f), list(k.values), boundary)
        for engine in ("direct", "fft"):
            np.testing.assert_allclose(convolve_plane(f, k, boundary, engine), expected, rtol=0, atol=1e-13)

    def test_2d_asymmetric_kernel_is_convolution_not_correlation(self):
        # single bright pixel reproduces the kernel itself, not its mirror
        v = np.zeros((3, 3))
        v[0, 0], v[1, 1], v[2, 1] = 0.5, 0.3, 0.2
        a = np.zeros((7, 7))
        a[3, 3] = 1.0
        for engine in ("direct", "fft"):
            out = convolve_plane(a, Kernel(v), "periodic", engine)
            np.testing.assert_allclose(out[2:5, 2:5], v, atol=1e-14)

    def test_kernel_larger_than_field(self):
        with pytest.raises(DomainError):
            convolve(_field(np.ones((5, 5))), gaussian_kernel(2.0, 2))
        with pytest.raises(DomainError):
            convolve(_field(np.ones(8)), gaussian_kernel(5.0, 2))

    def test_planes_are_independent(self):
        rng = np.random.default_rng(3)
        f = _field(rng.random((20, 20)), rng.random((20, 20)))
        k = gaussian_kernel(1.5, 2)
        out = convolve(f, k)
        assert np.array_equal(out.re, convolve_plane(f.re, k))
        assert np.array_equal(out.im, convolve_plane(f.im, k))

    @pytest.mark.parametrize("engine", ["direct", "fft"])
    def test_periodic_flux_conservation(self, engine):
        rng = np.random.default_rng(11)
        a = rng.random((40, 33))
        out = convolve_plane(a, gaussian_kernel(3.0, 2), "periodic", engine)
        assert out.sum() == pytest.approx(a.sum(), rel=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        f1, f2 = rng.random((18, 21)), rng.random((18, 21))
        k = gaussian_kernel(2.0, 2)
        lhs = convolve_plane(a * f1 + b * f2, k)
        rhs = a * convolve_plane(f1, k) + b * convolve_plane(f2, k)
        scale = max(1.0, np.abs(rhs).max())
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["reflect", "periodic"]), st.integers(13, 64))
    def test_engine_equivalence(self, seed, boundary, n):
        rng = np.random.default_rng(seed)
        a = rng.random((n, n + 3))
        k = gaussian_kernel(1.5, 2)
        d = convolve_plane(a, k, boundary, "direct")
        f = convolve_plane(a, k, boundary, "fft")
        assert np.max(np.abs(d - f)) <= 1e-6 * np.max(np.abs(d))

    def test_commutes_with_phasor_mixing(self):
        from flimdeconv import single_exponential_phasor

        rng = np.random.default_rng(5)
        a1, a2 = rng.random((16, 16)), rng.random((16, 16))
        g1, s1 = single_exponential_phasor(1.0)
        g2, s2 = single_exponential_phasor(3.0)
        k = gaussian_kernel(1.5, 2)
        mixed = _field(a1 * g1 + a2 * g2, a1 * s1 + a2 * s2)
        out = convolve(mixed, k)
        ca1, ca2 = convolve_plane(a1, k), convolve_plane(a2, k)
        np.testing.assert_allclose(out.re, ca1 * g1 + ca2 * g2, atol=1e-13)
        np.testing.assert_allclose(out.im, ca1 * s1 + ca2 * s2, atol=1e-13)


@pytest.mark.parametrize("values", [
    np.outer([0.2, 0.6, 0.2], [0.1, 0.3, 0.2, 0.3, 0.1]),
    np.outer([1.0], [0.1, 0.3, 0.2, 0.3, 0.1]),
    np.outer([0.1, 0.2, 0.7], [0.2, 0.8, 0.0]),
])
@pytest.mark.parametrize("boundary,nd_mode", [("reflect", "reflect"), ("periodic", "wrap")])
def test_non_square_kernels_match_ndimage(values, boundary, nd_mode):
    from scipy import ndimage

    a = np.random.default_rng(4).random((21, 26))
    expected = ndimage.convolve(a, values, mode=nd_mode)
    for engine in ("direct", "fft"):
        np.testing.assert_allclose(convolve_plane(a, Kernel(values), boundary, engine), expected, atol=1e-14)


def test_reflect_gaussian_uses_cosine_basis():
    # even kernels under half-sample reflection skip padding; result must still match the tap sum
    k = gaussian_kernel(5.0, 2)
    assert Blur(k, (64, 64), "reflect", "fft")._dct_gain is not None
    assert Blur(k, (64, 64), "periodic", "fft")._dct_gain is None
    a = np.random.default_rng(8).random((64, 64))
    d = convolve_plane(a, k, "reflect", "direct")
    assert np.max(np.abs(convolve_plane(a, k, "reflect", "fft") - d)) <= 1e-13


def test_blur_rejects_wrong_shape():
    b = Blur(gaussian_kernel(1.0, 2), (10, 10))
    with pytest.raises(DomainError):
        b(np.ones((10, 11)))


def test_field_validation():
    with pytest.raises(DomainError):
        ComplexField(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(DomainError):
        ComplexField(np.ones(3), np.array([1.0, np.nan, 1.0]))
    with pytest.raises(DomainError):
        ComplexField(np.ones(3), np.ones(3), pixel_pitch_nm=0)
