"""HDR transform bank: analytic tone-mapping operators followed by JPEG.

A transform is written ``OPERATOR:param:jpegLevel``; ``param`` is the
desaturation amount for HABLE and REINHARD02 and the nominal HDR luminance
(nits) for ITU21_A.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .distortions import TransformSpec, jpeg_roundtrip, parse_transform, sample_transform
from .errors import ColorspaceError, ConfigError, SpecParseError
from .pixelcore import (
    LUMA_BT709, LUMA_BT2020, BT2020_TO_BT709, Colorspace, Image, apply_srgb_oetf_clip,
    pq_eotf,
)

JPEG_LADDER = (60, 40, 25, 12)
REFERENCE_WHITE_NITS = 100.0

# Uncharted 2 filmic curve.
HABLE_A, HABLE_B, HABLE_C, HABLE_D, HABLE_E, HABLE_F = 0.15, 0.50, 0.10, 0.20, 0.02, 0.30
HABLE_WHITE = 11.2


class Operator(str, enum.Enum):
    HABLE = "HABLE"
    REINHARD02 = "REINHARD02"
    ITU21_A = "ITU21_A"


@dataclass(frozen=True)
class TmoSpec:
    operator: Operator
    param: float
    jpeg_level: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "operator", Operator(self.operator))
        except ValueError:
            raise ConfigError(f"unknown tone-mapping operator {self.operator!r}") from None
        if self.operator is Operator.ITU21_A:
            if not 100.0 <= self.param <= 10000.0:
                raise ConfigError(f"nominal luminance must be in [100, 10000], got {self.param}")
        elif not 0.0 <= self.param <= 1.0:
            raise ConfigError(f"desaturation must be in [0, 1], got {self.param}")
        if self.jpeg_level not in (1, 2, 3, 4):
            raise ConfigError(f"jpeg_level must be in 1..4, got {self.jpeg_level}")

    def to_string(self) -> str:
        return f"{self.operator.value}:{self.param!r}:{self.jpeg_level}"

    __str__ = to_string


def parse_tmo(text: str) -> TmoSpec:
    fields = text.strip().split(":")
    if len(fields) != 3:
        raise SpecParseError("expected OPERATOR:param:jpegLevel", text, 0)
    try:
        op = Operator(fields[0])
    except ValueError:
        raise SpecParseError(f"unknown operator {fields[0]!r}", text, 0) from None
    try:
        param, level = float(fields[1]), int(fields[2])
    except ValueError:
        raise SpecParseError("non-numeric parameter", text, len(fields[0]) + 1) from None
    try:
        return TmoSpec(op, param, level)
    except ConfigError as e:
        raise SpecParseError(str(e), text, len(fields[0]) + 1) from None


def sample_tmo(rng_seed=None, operators=tuple(Operator),
               desat_range=(0.0, 1.0), nominal_range=(400.0, 4000.0)) -> TmoSpec:
    rng = np.random.default_rng(rng_seed)
    op = Operator(operators[int(rng.integers(0, len(operators)))])
    if op is Operator.ITU21_A:
        param = float(rng.uniform(*nominal_range))
    else:
        param = float(rng.uniform(*desat_range))
    return TmoSpec(op, round(param, 4), int(rng.integers(1, 5)))


# -- curves ----------------------------------------------------------------------

def _uncharted(x):
    a, b, c, d, e, f = HABLE_A, HABLE_B, HABLE_C, HABLE_D, HABLE_E, HABLE_F
    return (x * (a * x + c * b) + d * e) / (x * (a * x + b) + d * f) - e / f


def hable_curve(x):
    """Filmic curve normalised so the linear white point maps to 1."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    return _uncharted(x) / _uncharted(HABLE_WHITE)


def reinhard02_curve(x, white=np.inf):
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    if np.isinf(white):
        return x / (1 + x)
    return x * (1 + x / (white * white)) / (1 + x)


_RHO_SDR = 1 + 32 * (REFERENCE_WHITE_NITS / 10000.0) ** (1 / 2.4)


def _itu_luma_gamma(yp, nominal_nits):
    """Gamma-domain luma Y' of the HDR signal -> gamma-domain SDR luma."""
    rho_h = 1 + 32 * (nominal_nits / 10000.0) ** (1 / 2.4)
    yp_p = np.log1p((rho_h - 1) * yp) / np.log(rho_h)
    yc = np.where(
        yp_p <= 0.7399, 1.0770 * yp_p,
        np.where(yp_p < 0.9909, -1.1510 * yp_p**2 + 2.7811 * yp_p - 0.6302, 0.5 * yp_p + 0.5))
    return (_RHO_SDR ** yc - 1) / (_RHO_SDR - 1)


def itu21a_curve(x, nominal_nits=1000.0):
    """Luminance curve of BT.2446 method A on linear light relative to ``nominal_nits``."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return _itu_luma_gamma(x ** (1 / 2.4), nominal_nits) ** 2.4


def desaturate(rgb_linear: np.ndarray, amount: float) -> np.ndarray:
    """Blend each pixel toward its BT.709 luma by ``amount``."""
    if not 0.0 <= amount <= 1.0:
        raise ConfigError(f"desaturation amount must be in [0, 1], got {amount}")
    rgb = np.asarray(rgb_linear, dtype=np.float64)
    y = (rgb @ LUMA_BT709)[..., None]
    return (1 - amount) * rgb + amount * y


def _itu21a_rgb(rgb2020_nits, nominal_nits):
    """Full BT.2446-A colour pipeline; returns linear BT.2020 SDR light in [0, 1]."""
    e = np.clip(rgb2020_nits / nominal_nits, 0.0, 1.0) ** (1 / 2.4)
    yp = e @ LUMA_BT2020
    ysdr = _itu_luma_gamma(yp, nominal_nits)
    f = np.divide(ysdr, 1.1 * yp, out=np.zeros_like(yp), where=yp > 0)
    cb = f * (e[..., 2] - yp) / 1.8814
    cr = f * (e[..., 0] - yp) / 1.4746
    ytmo = ysdr - np.maximum(0.1 * cr, 0.0)
    r = ytmo + 1.4746 * cr
    b = ytmo + 1.8814 * cb
    g = (ytmo - LUMA_BT2020[0] * r - LUMA_BT2020[2] * b) / LUMA_BT2020[1]
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0) ** 2.4


def tone_map_linear(img: Image, spec: TmoSpec) -> np.ndarray:
    """Tone-map a PQ frame to linear BT.709 light in [0, 1] (before JPEG)."""
    if img.colorspace != Colorspace.PQ_BT2100:
        raise ColorspaceError(f"tone mapping expects PQ input, got {img.colorspace.name}")
    nits2020 = pq_eotf(img.pixels)
    if spec.operator is Operator.ITU21_A:
        rgb = np.clip(_itu21a_rgb(nits2020, spec.param) @ BT2020_TO_BT709.T, 0.0, None)
        return np.clip(rgb, 0.0, 1.0)
    rgb = np.clip(nits2020 @ BT2020_TO_BT709.T, 0.0, None) / REFERENCE_WHITE_NITS
    y_in = rgb @ LUMA_BT709
    curve = hable_curve if spec.operator is Operator.HABLE else reinhard02_curve
    y_out = curve(y_in)
    ratio = np.divide(y_out, y_in, out=np.zeros_like(y_in), where=y_in > 0)
    rgb = desaturate(rgb * ratio[..., None], spec.param)
    return np.clip(rgb, 0.0, 1.0)


def tone_map(img: Image, spec: TmoSpec) -> Image:
    sdr = apply_srgb_oetf_clip(tone_map_linear(img, spec))
    sdr = jpeg_roundtrip(sdr, JPEG_LADDER[spec.jpeg_level - 1])
    return Image(sdr, Colorspace.SRGB, img.bit_origin)


# -- unified bank interface -------------------------------------------------------

def parse_spec(text: str) -> TransformSpec | TmoSpec:
    """Parse either grammar; TMO specs are recognised by their operator name."""
    head = text.strip().split(":", 1)[0]
    if head in Operator.__members__:
        return parse_tmo(text)
    return parse_transform(text)


def apply_spec(img: Image, spec: TransformSpec | TmoSpec) -> Image:
    from .distortions import apply_transform

    if isinstance(spec, TmoSpec):
        return tone_map(img, spec)
    return apply_transform(img, spec)


def sample_spec(domain: str, rng_seed=None, kinds=None) -> TransformSpec | TmoSpec:
    if str(getattr(domain, "value", domain)).upper() == "HDR":
        return sample_tmo(rng_seed)
    if kinds is None:
        return sample_transform(rng_seed)
    return sample_transform(rng_seed, kinds=kinds)
