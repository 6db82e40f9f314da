"""The SDR transform bank: 25 unit distortions at five severities each.

A transform is an ordered composition of one to three unit distortions and
is written as ``kind:severity:seed[+kind:severity:seed...]``.  A unit may
carry an explicit strength override as a fourth field (``kind:sev:seed:value``)
which replaces the ladder value for its primary parameter.

Severity ladders
----------------
=================  ==========================  ==========================================
kind               primary parameter           ladder (severity 1 -> 5)
=================  ==========================  ==========================================
*Resize (x4)       downscale factor            1/1.25, 1/1.5, 1/2, 1/3, 1/4
MotionBlur         kernel length (px)          3, 5, 9, 13, 17
GaussianBlur       sigma (px)                  0.5, 1.0, 2.0, 3.5, 5.0
LensBlur           disk radius (px)            1, 2, 3, 4, 6
MeanShift          additive offset             0.02, 0.05, 0.08, 0.12, 0.16
Contrast           sigmoid gain                1.5, 2.5, 4, 6, 9
Compress           JPEG quality                75, 50, 35, 20, 10
UnsharpMasking     sharpening amount           0.5, 1.0, 2.0, 3.0, 5.0
ColorBlock         number of 32px blocks       2, 4, 6, 8, 10
Jitter             max pixel offset (px)       0.5, 1.0, 1.5, 2.0, 3.0
PatchJitter        max block offset (px)       1, 2, 3, 4, 6
RGBNoise           noise std                   0.01, 0.02, 0.04, 0.06, 0.10
YUVNoise           noise std                   0.01, 0.02, 0.04, 0.06, 0.10
ImpulseNoise       corrupted fraction          0.005, 0.01, 0.02, 0.05, 0.10
SpeckleNoise       multiplicative std          0.05, 0.10, 0.20, 0.30, 0.50
Denoise            noise std / blur sigma      (0.02,0.5) ... (0.10,1.5)
Brighten           1 - gamma exponent          0.1, 0.2, 0.3, 0.4, 0.5
Darken             gamma exponent - 1          1/0.9-1 ... 1/0.5-1
ColorDiffuse       a*b* blur sigma (px)        1, 3, 6, 8, 12
ColorShift         channel offset (px)         1, 2, 3, 4, 6
HSVSaturate        saturation reduction        0.2, 0.4, 0.6, 0.8, 1.0
LABSaturate        chroma gain - 1             0.2, 0.5, 1.0, 1.5, 2.0
=================  ==========================  ==========================================

Brighten and Darken are reciprocal gamma curves, so Darken at severity ``s``
undoes Brighten at severity ``s`` up to clipping.
"""

from __future__ import annotations

import enum
import io
import warnings
from dataclasses import dataclass, field

import cv2
import numpy as np
from PIL import Image as PILImage
from scipy import ndimage
from skimage import color as skcolor

from .errors import ColorspaceError, ConfigError, SizeError, SpecParseError
from .pixelcore import Colorspace, Image

SEVERITIES = (1, 2, 3, 4, 5)


class Kind(str, enum.Enum):
    NNResize = "NNResize"
    BilinearResize = "BilinearResize"
    BicubicResize = "BicubicResize"
    LanczosResize = "LanczosResize"
    MotionBlur = "MotionBlur"
    GaussianBlur = "GaussianBlur"
    LensBlur = "LensBlur"
    MeanShift = "MeanShift"
    Contrast = "Contrast"
    Compress = "Compress"
    UnsharpMasking = "UnsharpMasking"
    ColorBlock = "ColorBlock"
    Jitter = "Jitter"
    PatchJitter = "PatchJitter"
    RGBNoise = "RGBNoise"
    YUVNoise = "YUVNoise"
    ImpulseNoise = "ImpulseNoise"
    SpeckleNoise = "SpeckleNoise"
    Denoise = "Denoise"
    Brighten = "Brighten"
    Darken = "Darken"
    ColorDiffuse = "ColorDiffuse"
    ColorShift = "ColorShift"
    HSVSaturate = "HSVSaturate"
    LABSaturate = "LABSaturate"


ALL_KINDS = tuple(Kind)

STOCHASTIC = frozenset({
    Kind.RGBNoise, Kind.YUVNoise, Kind.ImpulseNoise, Kind.SpeckleNoise, Kind.Denoise,
    Kind.Jitter, Kind.PatchJitter, Kind.ColorBlock, Kind.MotionBlur, Kind.ColorShift,
})

_RESIZE = (1 / 1.25, 1 / 1.5, 1 / 2, 1 / 3, 1 / 4)
_BRIGHTEN_GAMMA = (0.9, 0.8, 0.7, 0.6, 0.5)

# kind -> list of five parameter dicts; the first key is the primary strength.
_LADDERS: dict[Kind, list[dict]] = {
    Kind.NNResize: [{"factor": f} for f in _RESIZE],
    Kind.BilinearResize: [{"factor": f} for f in _RESIZE],
    Kind.BicubicResize: [{"factor": f} for f in _RESIZE],
    Kind.LanczosResize: [{"factor": f} for f in _RESIZE],
    Kind.MotionBlur: [{"length": n} for n in (3, 5, 9, 13, 17)],
    Kind.GaussianBlur: [{"sigma": s} for s in (0.5, 1.0, 2.0, 3.5, 5.0)],
    Kind.LensBlur: [{"radius": r} for r in (1, 2, 3, 4, 6)],
    Kind.MeanShift: [{"delta": d} for d in (0.02, 0.05, 0.08, 0.12, 0.16)],
    Kind.Contrast: [{"gain": g} for g in (1.5, 2.5, 4.0, 6.0, 9.0)],
    Kind.Compress: [{"quality": q} for q in (75, 50, 35, 20, 10)],
    Kind.UnsharpMasking: [{"amount": a, "sigma": 1.0} for a in (0.5, 1.0, 2.0, 3.0, 5.0)],
    Kind.ColorBlock: [{"blocks": n, "side": 32} for n in (2, 4, 6, 8, 10)],
    Kind.Jitter: [{"offset": o} for o in (0.5, 1.0, 1.5, 2.0, 3.0)],
    Kind.PatchJitter: [{"offset": o, "block": 8} for o in (1, 2, 3, 4, 6)],
    Kind.RGBNoise: [{"sigma": s} for s in (0.01, 0.02, 0.04, 0.06, 0.10)],
    Kind.YUVNoise: [{"sigma": s} for s in (0.01, 0.02, 0.04, 0.06, 0.10)],
    Kind.ImpulseNoise: [{"fraction": p} for p in (0.005, 0.01, 0.02, 0.05, 0.10)],
    Kind.SpeckleNoise: [{"sigma": s} for s in (0.05, 0.10, 0.20, 0.30, 0.50)],
    Kind.Denoise: [{"sigma": s, "blur": b} for s, b in
                   zip((0.02, 0.04, 0.06, 0.08, 0.10), (0.5, 0.75, 1.0, 1.25, 1.5))],
    Kind.Brighten: [{"strength": 1 - g} for g in _BRIGHTEN_GAMMA],
    Kind.Darken: [{"strength": 1 / g - 1} for g in _BRIGHTEN_GAMMA],
    Kind.ColorDiffuse: [{"sigma": s} for s in (1.0, 3.0, 6.0, 8.0, 12.0)],
    Kind.ColorShift: [{"offset": o} for o in (1, 2, 3, 4, 6)],
    Kind.HSVSaturate: [{"reduction": r} for r in (0.2, 0.4, 0.6, 0.8, 1.0)],
    Kind.LABSaturate: [{"gain": g} for g in (0.2, 0.5, 1.0, 1.5, 2.0)],
}


def _kind(kind) -> Kind:
    try:
        return Kind(kind)
    except ValueError:
        raise ConfigError(f"unknown distortion kind {kind!r}") from None


def severity_table(kind: Kind | str) -> list[dict]:
    """Return the five parameter sets used for ``kind``, severity 1 first."""
    return [dict(p) for p in _LADDERS[_kind(kind)]]


def primary_parameter(kind: Kind | str) -> str:
    return next(iter(_LADDERS[_kind(kind)][0]))


@dataclass(frozen=True)
class UnitDistortion:
    kind: Kind
    severity: int
    noise_seed: int = 0
    strength: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _kind(self.kind))
        if self.severity not in SEVERITIES:
            raise ConfigError(f"severity must be in 1..5, got {self.severity}")

    def params(self) -> dict:
        p = dict(_LADDERS[self.kind][self.severity - 1])
        if self.strength is not None:
            p[primary_parameter(self.kind)] = self.strength
        return p

    def to_string(self) -> str:
        s = f"{self.kind.value}:{self.severity}:{self.noise_seed}"
        if self.strength is not None:
            s += f":{self.strength!r}"
        return s


class BankDomain(str, enum.Enum):
    SDR = "SDR"
    HDR = "HDR"


@dataclass(frozen=True)
class TransformSpec:
    units: tuple[UnitDistortion, ...]
    bank_domain: BankDomain = BankDomain.SDR

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not 1 <= len(self.units) <= 3:
            raise ConfigError(f"a transform has 1 to 3 units, got {len(self.units)}")

    def to_string(self) -> str:
        return "+".join(u.to_string() for u in self.units)

    __str__ = to_string

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        return parse_transform(text)


def parse_transform(text: str) -> TransformSpec:
    """Parse the ``kind:severity:seed[+...]`` grammar with positional diagnostics."""
    if not text or not text.strip():
        raise SpecParseError("empty transform spec", text, 0)
    units = []
    pos = 0
    for token in text.split("+"):
        fields = token.split(":")
        if len(fields) not in (3, 4):
            raise SpecParseError(
                f"malformed unit {token!r}: expected kind:severity:seed", text, pos)
        name, sev, seed = fields[:3]
        try:
            kind = Kind(name)
        except ValueError:
            raise SpecParseError(f"unknown distortion kind {name!r}", text, pos) from None
        try:
            sev_i = int(sev)
            seed_i = int(seed)
            strength = float(fields[3]) if len(fields) == 4 else None
        except ValueError:
            raise SpecParseError(f"non-numeric field in unit {token!r}", text, pos) from None
        if sev_i not in SEVERITIES:
            raise SpecParseError(f"severity {sev_i} out of range in {token!r}", text, pos)
        units.append(UnitDistortion(kind, sev_i, seed_i, strength))
        pos += len(token) + 1
    if len(units) > 3:
        raise SpecParseError("more than three units", text, len(text))
    return TransformSpec(tuple(units))


def sample_transform(rng_seed=None, kinds=ALL_KINDS, max_depth: int = 3) -> TransformSpec:
    """Draw a random composition: depth uniform in 1..max_depth, distinct kinds,
    uniform severities and a fresh noise seed per unit."""
    kinds = [_kind(k) for k in kinds]
    rng = np.random.default_rng(rng_seed)
    depth = int(rng.integers(1, min(max_depth, len(kinds)) + 1))
    chosen = rng.choice(len(kinds), size=depth, replace=False)
    units = []
    for idx in chosen:
        sev = int(rng.integers(1, 6))
        seed = int(rng.integers(0, 2**31 - 1))
        units.append(UnitDistortion(kinds[int(idx)], sev, seed))
    return TransformSpec(tuple(units))


# -- distortion implementations --------------------------------------------------
# Each takes a float64 HxWx3 array in [0, 1], a params dict and a Generator.

def _resize(x, p, rng, interp):
    h, w = x.shape[:2]
    dh, dw = int(round(h * p["factor"])), int(round(w * p["factor"]))
    if dh < 2 or dw < 2:
        raise SizeError(f"image {h}x{w} too small for resize factor {p['factor']:.3f}")
    small = cv2.resize(x, (dw, dh), interpolation=cv2.INTER_CUBIC)
    return cv2.resize(small, (w, h), interpolation=interp)


def _filter(x, kernel):
    return cv2.filter2D(x, -1, kernel, borderType=cv2.BORDER_REFLECT)


def _motion_blur(x, p, rng):
    n = int(p["length"])
    angle = rng.uniform(0, 180)
    k = np.zeros((n, n), np.float64)
    k[n // 2, :] = 1.0
    rot = cv2.getRotationMatrix2D(((n - 1) / 2, (n - 1) / 2), angle, 1.0)
    k = cv2.warpAffine(k, rot, (n, n), flags=cv2.INTER_LINEAR)
    return _filter(x, k / k.sum())


def _gaussian_blur(x, p, rng):
    return ndimage.gaussian_filter(x, sigma=(p["sigma"], p["sigma"], 0), mode="reflect")


def _lens_blur(x, p, rng):
    r = float(p["radius"])
    n = int(np.ceil(r))
    yy, xx = np.mgrid[-n:n + 1, -n:n + 1]
    k = (xx**2 + yy**2 <= r * r).astype(np.float64)
    return _filter(x, k / k.sum())


def _mean_shift(x, p, rng):
    return x + p["delta"]


def _contrast(x, p, rng):
    g = p["gain"]
    sig = lambda v: 1 / (1 + np.exp(-g * (v - 0.5)))
    lo, hi = sig(0.0), sig(1.0)
    return (sig(x) - lo) / (hi - lo)


def jpeg_roundtrip(x: np.ndarray, quality: int) -> np.ndarray:
    """Encode and decode through an in-memory JPEG at the given quality."""
    buf = io.BytesIO()
    u8 = np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)
    PILImage.fromarray(u8).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(PILImage.open(buf).convert("RGB"), dtype=np.float64) / 255.0


def _compress(x, p, rng):
    return jpeg_roundtrip(x, p["quality"])


def _unsharp(x, p, rng):
    blur = ndimage.gaussian_filter(x, sigma=(p["sigma"], p["sigma"], 0), mode="reflect")
    return x + p["amount"] * (x - blur)


def _color_block(x, p, rng):
    h, w = x.shape[:2]
    side = min(int(p["side"]), h, w)
    out = x.copy()
    # Fixed-length draws, painted back to front, so the blocks of severity k
    # stay on top of any block added at a higher severity.
    rows = rng.integers(0, h - side + 1, size=16)
    cols = rng.integers(0, w - side + 1, size=16)
    colors = rng.uniform(0, 1, size=(16, 3))
    for i in reversed(range(int(p["blocks"]))):
        out[rows[i]:rows[i] + side, cols[i]:cols[i] + side] = colors[i]
    return out


def _warp(x, dy, dx, order=1):
    h, w = x.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + dy, xx + dx]
    return np.stack([ndimage.map_coordinates(x[..., c], coords, order=order, mode="reflect")
                     for c in range(3)], axis=-1)


def _jitter(x, p, rng):
    h, w = x.shape[:2]
    field_ = rng.uniform(-1, 1, size=(2, h, w))
    return _warp(x, p["offset"] * field_[0], p["offset"] * field_[1])


def _patch_jitter(x, p, rng):
    h, w = x.shape[:2]
    b = int(p["block"])
    nb = (-(-h // b), -(-w // b))
    field_ = rng.uniform(-1, 1, size=(2,) + nb)
    dy = np.round(p["offset"] * field_[0])
    dx = np.round(p["offset"] * field_[1])
    dy = np.kron(dy, np.ones((b, b)))[:h, :w]
    dx = np.kron(dx, np.ones((b, b)))[:h, :w]
    return _warp(x, dy, dx, order=0)


def _rgb_noise(x, p, rng):
    return x + p["sigma"] * rng.standard_normal(x.shape)


def _yuv_noise(x, p, rng):
    yuv = skcolor.rgb2yuv(x)
    return skcolor.yuv2rgb(yuv + p["sigma"] * rng.standard_normal(x.shape))


def _impulse(x, p, rng):
    u = rng.uniform(size=x.shape[:2])
    salt = rng.uniform(size=x.shape[:2]) < 0.5
    out = x.copy()
    hit = u < p["fraction"]
    out[hit & salt] = 1.0
    out[hit & ~salt] = 0.0
    return out


def _speckle(x, p, rng):
    return x * (1 + p["sigma"] * rng.standard_normal(x.shape))


def _denoise(x, p, rng):
    noisy = np.clip(x + p["sigma"] * rng.standard_normal(x.shape), 0, 1)
    return ndimage.gaussian_filter(noisy, sigma=(p["blur"], p["blur"], 0), mode="reflect")


def _brighten(x, p, rng):
    return np.clip(x, 0, 1) ** (1 - p["strength"])


def _darken(x, p, rng):
    return np.clip(x, 0, 1) ** (1 + p["strength"])


def _lab2rgb(lab):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return skcolor.lab2rgb(lab)


def _color_diffuse(x, p, rng):
    lab = skcolor.rgb2lab(x)
    s = p["sigma"]
    for c in (1, 2):
        lab[..., c] = ndimage.gaussian_filter(lab[..., c], sigma=s, mode="reflect")
    return _lab2rgb(lab)


def _color_shift(x, p, rng):
    angle = rng.uniform(0, 2 * np.pi)
    dy, dx = p["offset"] * np.sin(angle), p["offset"] * np.cos(angle)
    out = x.copy()
    h, w = x.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for c, sign in ((0, 1.0), (2, -1.0)):
        out[..., c] = ndimage.map_coordinates(x[..., c], [yy + sign * dy, xx + sign * dx],
                                              order=1, mode="reflect")
    return out


def _hsv_saturate(x, p, rng):
    # Scaling HSV saturation at fixed hue and value moves every channel
    # linearly toward V = max(r, g, b), so no round trip through HSV is needed.
    x = np.clip(x, 0, 1)
    v = x.max(axis=-1, keepdims=True)
    return v - (1 - p["reduction"]) * (v - x)


def _lab_saturate(x, p, rng):
    lab = skcolor.rgb2lab(x)
    lab[..., 1:] *= 1 + p["gain"]
    return _lab2rgb(lab)


_IMPL = {
    Kind.NNResize: lambda x, p, r: _resize(x, p, r, cv2.INTER_NEAREST_EXACT),
    Kind.BilinearResize: lambda x, p, r: _resize(x, p, r, cv2.INTER_LINEAR),
    Kind.BicubicResize: lambda x, p, r: _resize(x, p, r, cv2.INTER_CUBIC),
    Kind.LanczosResize: lambda x, p, r: _resize(x, p, r, cv2.INTER_LANCZOS4),
    Kind.MotionBlur: _motion_blur,
    Kind.GaussianBlur: _gaussian_blur,
    Kind.LensBlur: _lens_blur,
    Kind.MeanShift: _mean_shift,
    Kind.Contrast: _contrast,
    Kind.Compress: _compress,
    Kind.UnsharpMasking: _unsharp,
    Kind.ColorBlock: _color_block,
    Kind.Jitter: _jitter,
    Kind.PatchJitter: _patch_jitter,
    Kind.RGBNoise: _rgb_noise,
    Kind.YUVNoise: _yuv_noise,
    Kind.ImpulseNoise: _impulse,
    Kind.SpeckleNoise: _speckle,
    Kind.Denoise: _denoise,
    Kind.Brighten: _brighten,
    Kind.Darken: _darken,
    Kind.ColorDiffuse: _color_diffuse,
    Kind.ColorShift: _color_shift,
    Kind.HSVSaturate: _hsv_saturate,
    Kind.LABSaturate: _lab_saturate,
}


def apply_unit(img: Image, d: UnitDistortion) -> Image:
    if img.colorspace != Colorspace.SRGB:
        raise ColorspaceError(f"distortions expect SRGB input, got {img.colorspace.name}")
    rng = np.random.default_rng(d.noise_seed)
    x = img.pixels.astype(np.float64)
    out = _IMPL[d.kind](x, d.params(), rng)
    return img.with_pixels(np.clip(out, 0, 1))


def apply_transform(img: Image, spec: TransformSpec) -> Image:
    for unit in spec.units:
        img = apply_unit(img, unit)
    return img
