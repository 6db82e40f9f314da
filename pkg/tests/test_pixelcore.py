import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disque.errors import ColorspaceError, ConfigError, DataError, SizeError
from disque.pixelcore import (
    BT2020_TO_BT709, BitOrigin, Colorspace, ColorTarget, Image, bt2020_to_bt709, color_convert,
    color_convert_inverse, linear_to_pq, pq_eotf, pq_inverse_eotf, pq_to_linear, read_image,
    sample_patch, screen_image, srgb_eotf, srgb_oetf, srgb_to_linear, write_png, write_png16,
)

mpmath.mp.dps = 40


def mp_srgb_eotf(v):
    v = mpmath.mpf(v)
    return v / 12.92 if v <= mpmath.mpf("0.04045") else ((v + mpmath.mpf("0.055")) / mpmath.mpf("1.055")) ** mpmath.mpf("2.4")


def mp_pq_eotf(e):
    m1 = mpmath.mpf(2610) / 16384
    m2 = mpmath.mpf(2523) / 4096 * 128
    c1 = mpmath.mpf(3424) / 4096
    c2 = mpmath.mpf(2413) / 4096 * 32
    c3 = mpmath.mpf(2392) / 4096 * 32
    ep = mpmath.mpf(e) ** (1 / m2)
    return 10000 * (max(ep - c1, 0) / (c2 - c3 * ep)) ** (1 / m1)


@pytest.mark.parametrize("v", [0.0, 0.01, 0.04045, 0.2, 0.5, 0.73, 1.0])
def test_srgb_eotf_matches_arbitrary_precision(v):
    assert srgb_eotf(v) == pytest.approx(float(mp_srgb_eotf(v)), rel=1e-12, abs=1e-15)


def test_srgb_half_value():
    assert srgb_eotf(0.5) == pytest.approx(0.21404114, abs=1e-8)


@pytest.mark.parametrize("e", [0.0, 0.1, 0.25, 0.5, 0.508, 0.75, 1.0])
def test_pq_eotf_matches_arbitrary_precision(e):
    assert pq_eotf(e) == pytest.approx(float(mp_pq_eotf(e)), rel=1e-10, abs=1e-12)


def test_pq_endpoints():
    assert pq_eotf(1.0) == pytest.approx(10000.0, rel=1e-12)
    assert pq_eotf(0.0) == 0.0
    # 100 nits sits near code 0.508 (the usual SDR white level in PQ)
    assert pq_inverse_eotf(100.0) == pytest.approx(0.50808, abs=1e-4)


@given(st.floats(0, 1))
def test_srgb_roundtrip(v):
    # the standard's two breakpoints (0.04045 and 0.0031308 * 12.92) disagree by ~3e-8
    assert srgb_oetf(srgb_eotf(v)) == pytest.approx(v, abs=1e-7)


@given(st.floats(0, 10000))
def test_pq_roundtrip(nits):
    assert pq_eotf(pq_inverse_eotf(nits)) == pytest.approx(nits, rel=1e-9, abs=1e-9)


def test_transfer_functions_monotone():
    x = np.linspace(0, 1, 2001)
    assert np.all(np.diff(srgb_eotf(x)) > 0)
    assert np.all(np.diff(pq_eotf(x)[x > 0.08]) > 0)


def test_image_validation():
    with pytest.raises(SizeError):
        Image(np.zeros((4, 4)))
    with pytest.raises(SizeError):
        Image(np.zeros((4, 4, 4)))
    with pytest.raises(DataError):
        Image(np.full((2, 2, 3), np.nan))
    img = Image(np.full((2, 2, 3), 1.5))
    assert img.pixels.dtype == np.float32 and img.pixels.max() == 1.0


def test_colorspace_tags_enforced():
    img = Image(np.full((4, 4, 3), 0.5))
    with pytest.raises(ColorspaceError):
        pq_to_linear(img)
    lin = srgb_to_linear(img)
    assert lin.colorspace is Colorspace.LINEAR
    with pytest.raises(ConfigError):
        linear_to_pq(lin, peak_nits=0)


def test_pq_linear_roundtrip():
    px = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    img = Image(px, Colorspace.LINEAR)
    back = pq_to_linear(linear_to_pq(img, 1000.0), 1000.0)
    np.testing.assert_allclose(back.pixels, img.pixels, atol=1e-5)


def test_gamut_matrix_preserves_white():
    np.testing.assert_allclose(BT2020_TO_BT709.sum(axis=1), 1.0, atol=1e-5)
    assert np.all(bt2020_to_bt709(np.eye(3)) >= 0)


def test_yuv_of_pure_red():
    yuv = color_convert(Image(np.tile([1.0, 0, 0], (2, 2, 1))), ColorTarget.YUV)
    # BT.601: Y = 0.299, V = 0.615 - ... = 0.877 * (1 - 0.299)
    assert yuv[0, 0, 0] == pytest.approx(0.299, abs=1e-6)
    assert yuv[0, 0, 2] == pytest.approx(0.61498, abs=1e-4)


@pytest.mark.parametrize("target", list(ColorTarget))
def test_color_convert_roundtrip(target):
    px = np.random.default_rng(1).uniform(0.05, 0.95, (6, 6, 3))
    img = Image(px)
    back = color_convert_inverse(color_convert(img, target), target)
    np.testing.assert_allclose(back.pixels, img.pixels, atol=1e-4)


def test_color_convert_rejects_unknown_target():
    with pytest.raises(ConfigError):
        color_convert(Image(np.zeros((2, 2, 3))), "xyz")


def test_sample_patch_deterministic_and_in_bounds():
    img = Image(np.random.default_rng(2).uniform(size=(50, 70, 3)))
    a = sample_patch(img, 32, rng_seed=7)
    b = sample_patch(img, 32, rng_seed=7)
    assert a.offset == b.offset
    r, c = a.offset
    assert 0 <= r <= 18 and 0 <= c <= 38
    np.testing.assert_array_equal(a.image.pixels, img.pixels[r:r + 32, c:c + 32])
    with pytest.raises(SizeError):
        sample_patch(img, 64)


def test_screening():
    gray = Image(np.full((16, 16, 3), 0.5))
    rep = screen_image(gray)
    assert rep.is_grayscale and not rep.accepted
    colorful = Image(np.random.default_rng(3).uniform(0.2, 0.8, (16, 16, 3)))
    assert screen_image(colorful).accepted
    bright = np.random.default_rng(3).uniform(0.2, 0.8, (16, 16, 3))
    bright[:8] = 1.0
    rep = screen_image(Image(bright))
    assert rep.overexposed_fraction == pytest.approx(0.5) and not rep.accepted
    assert screen_image(Image(bright), theta_over=0.6).accepted


def test_png_roundtrip(tmp_path):
    px = np.random.default_rng(4).integers(0, 256, (9, 7, 3)) / 255.0
    write_png(Image(px), tmp_path / "a.png")
    img = read_image(tmp_path / "a.png")
    assert img.colorspace is Colorspace.SRGB and img.bit_origin is BitOrigin.EIGHT_BIT
    np.testing.assert_allclose(img.pixels, px, atol=1e-6)


def test_png16_holds_pq_codes(tmp_path):
    codes = np.random.default_rng(5).integers(0, 1024, (5, 6, 3)) / 1023.0
    write_png16(Image(codes, Colorspace.PQ_BT2100), tmp_path / "h.png")
    img = read_image(tmp_path / "h.png")
    assert img.colorspace is Colorspace.PQ_BT2100 and img.bit_origin is BitOrigin.TEN_BIT
    np.testing.assert_allclose(img.pixels, codes, atol=1e-6)


def test_read_errors(tmp_path):
    with pytest.raises(DataError):
        read_image(tmp_path / "missing.png")
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        read_image(tmp_path / "bad.png")
