import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disque.distortions import TransformSpec
from disque.errors import ColorspaceError, ConfigError, SpecParseError
from disque.pixelcore import Colorspace, Image, pq_inverse_eotf
from disque.tonemap import (
    JPEG_LADDER, Operator, TmoSpec, apply_spec, desaturate, hable_curve, itu21a_curve,
    parse_spec, parse_tmo, reinhard02_curve, sample_spec, sample_tmo, tone_map, tone_map_linear,
)


def mp_hable(x):
    a, b, c, d, e, f = (mpmath.mpf(v) for v in ("0.15", "0.5", "0.1", "0.2", "0.02", "0.3"))
    u = lambda t: (t * (a * t + c * b) + d * e) / (t * (a * t + b) + d * f) - e / f
    return u(mpmath.mpf(x)) / u(mpmath.mpf("11.2"))


@pytest.mark.parametrize("x", [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 11.2, 20.0])
def test_hable_matches_arbitrary_precision(x):
    assert hable_curve(x) == pytest.approx(float(mp_hable(x)), rel=1e-12, abs=1e-14)


def test_curve_endpoints():
    assert hable_curve(0.0) == pytest.approx(0.0, abs=1e-15)
    assert hable_curve(11.2) == pytest.approx(1.0)
    assert reinhard02_curve(1.0) == 0.5
    assert reinhard02_curve(4.0, white=2.0) == pytest.approx(4 * 2 / 5)
    assert itu21a_curve(0.0) == pytest.approx(0.0, abs=1e-15)
    assert itu21a_curve(1.0, 1000) == pytest.approx(1.0)


@pytest.mark.parametrize("curve", [hable_curve, reinhard02_curve,
                                   lambda x: itu21a_curve(x, 1000), lambda x: itu21a_curve(x, 4000)])
def test_curves_monotone(curve):
    x = np.linspace(0, 1, 4001)
    y = curve(x)
    assert np.all(np.diff(y) >= 0)


def test_desaturate():
    rgb = np.array([[0.8, 0.2, 0.1]])
    np.testing.assert_allclose(desaturate(rgb, 0.0), rgb)
    gray = desaturate(rgb, 1.0)
    assert np.ptp(gray) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        desaturate(rgb, 1.5)


def hdr_image(seed=0, size=32, peak=4000.0):
    nits = np.random.default_rng(seed).uniform(0.05, peak, (size, size, 3))
    return Image(pq_inverse_eotf(nits), Colorspace.PQ_BT2100)


@pytest.mark.parametrize("spec", [TmoSpec("HABLE", 0.0), TmoSpec("REINHARD02", 0.3, 2),
                                  TmoSpec("ITU21_A", 1000.0, 4)], ids=str)
def test_tone_map_output(spec):
    out = tone_map(hdr_image(), spec)
    assert out.colorspace is Colorspace.SRGB
    assert out.pixels.shape == (32, 32, 3)
    assert 0 <= out.pixels.min() and out.pixels.max() <= 1


@pytest.mark.parametrize("op, param", [("HABLE", 0.0), ("REINHARD02", 0.0), ("ITU21_A", 1000.0)])
def test_tone_map_monotone_in_luminance(op, param):
    levels = [1.0, 10.0, 100.0, 1000.0]
    outs = [tone_map_linear(Image(np.full((2, 2, 3), pq_inverse_eotf(n)), Colorspace.PQ_BT2100),
                            TmoSpec(op, param)).mean() for n in levels]
    assert all(b > a for a, b in zip(outs, outs[1:]))


def test_full_desaturation_gives_gray():
    out = tone_map_linear(hdr_image(1), TmoSpec("HABLE", 1.0))
    np.testing.assert_allclose(out.max(axis=-1), out.min(axis=-1), atol=1e-9)


def test_itu_keeps_neutral_gray_neutral():
    img = Image(np.full((4, 4, 3), pq_inverse_eotf(300.0)), Colorspace.PQ_BT2100)
    out = tone_map_linear(img, TmoSpec("ITU21_A", 1000.0))
    np.testing.assert_allclose(out.max(axis=-1), out.min(axis=-1), atol=1e-3)


def test_jpeg_ladder_orders_error():
    img = hdr_image(2)
    ref = tone_map_linear(img, TmoSpec("HABLE", 0.0))
    from disque.pixelcore import apply_srgb_oetf_clip
    ref = apply_srgb_oetf_clip(ref)
    errs = [np.mean((tone_map(img, TmoSpec("HABLE", 0.0, lvl)).pixels - ref) ** 2)
            for lvl in range(1, 5)]
    assert JPEG_LADDER == (60, 40, 25, 12)
    assert errs == sorted(errs)


def test_tone_map_requires_pq():
    with pytest.raises(ColorspaceError):
        tone_map(Image(np.zeros((4, 4, 3))), TmoSpec("HABLE", 0.0))


def test_spec_validation():
    with pytest.raises(ConfigError):
        TmoSpec("HABLE", 1.5)
    with pytest.raises(ConfigError):
        TmoSpec("ITU21_A", 50.0)
    with pytest.raises(ConfigError):
        TmoSpec("HABLE", 0.5, 5)
    with pytest.raises(ConfigError):
        TmoSpec("ACES", 0.5)


@given(st.integers(0, 2**32 - 1))
def test_tmo_string_roundtrip(seed):
    spec = sample_tmo(seed)
    assert parse_tmo(spec.to_string()) == spec
    assert parse_spec(str(spec)) == spec


@pytest.mark.parametrize("text", ["HABLE:0.5", "FOO:0.5:1", "HABLE:x:1", "HABLE:2.0:1"])
def test_tmo_parse_errors(text):
    with pytest.raises(SpecParseError):
        parse_tmo(text)


def test_unified_bank():
    assert isinstance(parse_spec("GaussianBlur:2:0"), TransformSpec)
    assert isinstance(sample_spec("SDR", 1), TransformSpec)
    assert isinstance(sample_spec("HDR", 1), TmoSpec)
    out = apply_spec(hdr_image(3), parse_spec("REINHARD02:0.5:1"))
    assert out.colorspace is Colorspace.SRGB
