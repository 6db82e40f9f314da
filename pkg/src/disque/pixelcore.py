"""Pixel containers, transfer functions, colorspace conversion and patch sampling.

Every pixel array in the package is an ``H x W x 3`` float array in ``[0, 1]``
wrapped in :class:`Image`, which records how the values should be interpreted.
Transfer functions are evaluated in float64 and clipped before being stored
back as float32.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image as PILImage
from skimage import color as skcolor

from .errors import ColorspaceError, ConfigError, DataError, SizeError


class Colorspace(str, enum.Enum):
    SRGB = "srgb"
    PQ_BT2100 = "pq"
    LINEAR = "linear"


class BitOrigin(str, enum.Enum):
    EIGHT_BIT = "8bit"
    TEN_BIT = "10bit"


@dataclass
class Image:
    pixels: np.ndarray
    colorspace: Colorspace = Colorspace.SRGB
    bit_origin: BitOrigin = BitOrigin.EIGHT_BIT

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise SizeError(f"expected an HxWx3 array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise DataError("image contains non-finite values")
        self.pixels = np.clip(px, 0.0, 1.0).astype(np.float32, copy=False)
        self.colorspace = Colorspace(self.colorspace)
        self.bit_origin = BitOrigin(self.bit_origin)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray, colorspace: Colorspace | None = None) -> "Image":
        return Image(pixels, colorspace or self.colorspace, self.bit_origin)


@dataclass
class Patch:
    image: Image
    source_id: str = ""
    offset: tuple[int, int] = (0, 0)


@dataclass
class ScreeningReport:
    is_grayscale: bool
    overexposed_fraction: float
    underexposed_fraction: float
    accepted: bool
    thresholds: dict = field(default_factory=dict)


def _require(img: Image, cs: Colorspace) -> None:
    if img.colorspace != cs:
        raise ColorspaceError(f"expected {cs.name} image, got {img.colorspace.name}")


# -- transfer functions -----------------------------------------------------

def srgb_eotf(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_oetf(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, None)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1 / 2.4) - 0.055)


PQ_M1 = 2610 / 16384
PQ_M2 = 2523 / 4096 * 128
PQ_C1 = 3424 / 4096
PQ_C2 = 2413 / 4096 * 32
PQ_C3 = 2392 / 4096 * 32
PQ_PEAK = 10000.0


def pq_eotf(code: np.ndarray) -> np.ndarray:
    """ST 2084 code values in [0, 1] -> absolute luminance in nits."""
    e = np.clip(np.asarray(code, dtype=np.float64), 0.0, 1.0) ** (1 / PQ_M2)
    return PQ_PEAK * (np.maximum(e - PQ_C1, 0.0) / (PQ_C2 - PQ_C3 * e)) ** (1 / PQ_M1)


def pq_inverse_eotf(nits: np.ndarray) -> np.ndarray:
    y = np.clip(np.asarray(nits, dtype=np.float64) / PQ_PEAK, 0.0, 1.0) ** PQ_M1
    return ((PQ_C1 + PQ_C2 * y) / (1 + PQ_C3 * y)) ** PQ_M2


def srgb_to_linear(img: Image) -> Image:
    _require(img, Colorspace.SRGB)
    return Image(np.clip(srgb_eotf(img.pixels), 0, 1), Colorspace.LINEAR, img.bit_origin)


def linear_to_srgb(img: Image) -> Image:
    _require(img, Colorspace.LINEAR)
    return Image(np.clip(srgb_oetf(img.pixels), 0, 1), Colorspace.SRGB, img.bit_origin)


def _check_peak(peak_nits: float) -> None:
    if not peak_nits > 0:
        raise ConfigError(f"peak_nits must be positive, got {peak_nits}")


def pq_to_linear(img: Image, peak_nits: float = 1000.0) -> Image:
    """Decode PQ codes to linear light, normalised so that ``peak_nits`` maps to 1."""
    _require(img, Colorspace.PQ_BT2100)
    _check_peak(peak_nits)
    lin = pq_eotf(img.pixels) / peak_nits
    return Image(np.clip(lin, 0, 1), Colorspace.LINEAR, img.bit_origin)


def linear_to_pq(img: Image, peak_nits: float = 1000.0) -> Image:
    _require(img, Colorspace.LINEAR)
    _check_peak(peak_nits)
    code = pq_inverse_eotf(np.asarray(img.pixels, dtype=np.float64) * peak_nits)
    return Image(np.clip(code, 0, 1), Colorspace.PQ_BT2100, img.bit_origin)


# BT.2020 -> BT.709 primaries, linear light.
BT2020_TO_BT709 = np.array([
    [1.660491, -0.587641, -0.072850],
    [-0.124550, 1.132900, -0.008349],
    [-0.018151, -0.100579, 1.118730],
])
BT709_TO_BT2020 = np.linalg.inv(BT2020_TO_BT709)

LUMA_BT709 = np.array([0.2126, 0.7152, 0.0722])
LUMA_BT2020 = np.array([0.2627, 0.6780, 0.0593])


def bt2020_to_bt709(rgb: np.ndarray) -> np.ndarray:
    """Matrix gamut conversion followed by clipping negative components."""
    return np.clip(np.asarray(rgb, dtype=np.float64) @ BT2020_TO_BT709.T, 0.0, None)


def luma(rgb: np.ndarray, weights: np.ndarray = LUMA_BT709) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ weights


# -- colorspace conversion ----------------------------------------------------

class ColorTarget(str, enum.Enum):
    HSV = "hsv"
    CIELAB = "cielab"
    YUV = "yuv"


def color_convert(img: Image, target: ColorTarget | str) -> np.ndarray:
    """Convert an sRGB image to HSV, CIELAB (D65) or BT.601 YUV channels."""
    _require(img, Colorspace.SRGB)
    try:
        target = ColorTarget(target)
    except ValueError:
        raise ConfigError(f"unsupported color target {target!r}") from None
    rgb = img.pixels.astype(np.float64)
    if target is ColorTarget.HSV:
        return skcolor.rgb2hsv(rgb)
    if target is ColorTarget.CIELAB:
        return skcolor.rgb2lab(rgb)
    return skcolor.rgb2yuv(rgb)


def color_convert_inverse(channels: np.ndarray, source: ColorTarget | str) -> Image:
    """Inverse of :func:`color_convert`; the result is clipped to [0, 1]."""
    try:
        source = ColorTarget(source)
    except ValueError:
        raise ConfigError(f"unsupported color target {source!r}") from None
    channels = np.asarray(channels, dtype=np.float64)
    if source is ColorTarget.HSV:
        rgb = skcolor.hsv2rgb(np.clip(channels, 0, 1))
    elif source is ColorTarget.CIELAB:
        rgb = skcolor.lab2rgb(channels)
    else:
        rgb = skcolor.yuv2rgb(channels)
    return Image(np.clip(rgb, 0, 1), Colorspace.SRGB)


# -- patches & screening --------------------------------------------------------

def sample_patch(img: Image, patch_size: int = 128, rng_seed=None, source_id: str = "") -> Patch:
    h, w = img.height, img.width
    if h < patch_size or w < patch_size:
        raise SizeError(f"image {h}x{w} is smaller than patch size {patch_size}")
    rng = np.random.default_rng(rng_seed)
    r = int(rng.integers(0, h - patch_size + 1))
    c = int(rng.integers(0, w - patch_size + 1))
    px = img.pixels[r:r + patch_size, c:c + patch_size]
    return Patch(img.with_pixels(px.copy()), source_id, (r, c))


def screen_image(img: Image, theta_over: float = 0.30, theta_under: float = 0.30,
                 sat_threshold: float = 0.02) -> ScreeningReport:
    """Flag grayscale and badly exposed images.

    Grayscale means a mean HSV saturation below ``sat_threshold``; exposure
    uses BT.709 luma of the decoded pixels against 0.02 / 0.98.
    """
    _require(img, Colorspace.SRGB)
    sat = color_convert(img, ColorTarget.HSV)[..., 1]
    is_gray = bool(sat.mean() < sat_threshold)
    y = luma(srgb_eotf(img.pixels))
    over = float(np.mean(y > 0.98))
    under = float(np.mean(y < 0.02))
    accepted = (not is_gray) and over <= theta_over and under <= theta_under
    return ScreeningReport(is_gray, over, under, accepted,
                           dict(theta_over=theta_over, theta_under=theta_under,
                                sat_threshold=sat_threshold))


# -- file IO ---------------------------------------------------------------------

def read_image(path: str | Path, colorspace: Colorspace | str | None = None) -> Image:
    """Load an 8-bit PNG/JPEG as sRGB, or a 16-bit PNG as PQ-coded HDR.

    16-bit files are assumed to hold 10-bit codes left-aligned in the
    16-bit word.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED | cv2.IMREAD_ANYDEPTH | cv2.IMREAD_ANYCOLOR)
    if raw is None:
        raise DataError(f"cannot decode image: {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    raw = raw[..., :3][..., ::-1]
    if raw.dtype == np.uint16:
        px = (raw >> 6).astype(np.float64) / 1023.0
        cs = Colorspace(colorspace) if colorspace else Colorspace.PQ_BT2100
        return Image(px, cs, BitOrigin.TEN_BIT)
    if raw.dtype != np.uint8:
        raise DataError(f"unsupported sample type {raw.dtype} in {path}")
    cs = Colorspace(colorspace) if colorspace else Colorspace.SRGB
    return Image(raw.astype(np.float64) / 255.0, cs, BitOrigin.EIGHT_BIT)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0, 1) * 255.0).astype(np.uint8)


def write_png(img: Image | np.ndarray, path: str | Path) -> None:
    px = img.pixels if isinstance(img, Image) else img
    PILImage.fromarray(to_uint8(px)).save(str(path), format="PNG")


def write_png16(img: Image, path: str | Path) -> None:
    """Write 10-bit codes left-aligned in a 16-bit PNG (the HDR frame format)."""
    codes = np.round(np.clip(img.pixels, 0, 1).astype(np.float64) * 1023.0).astype(np.uint16) << 6
    if not cv2.imwrite(str(path), codes[..., ::-1].copy()):
        raise DataError(f"cannot write {path}")


def apply_srgb_oetf_clip(rgb_linear: np.ndarray) -> np.ndarray:
    return np.clip(srgb_oetf(np.clip(rgb_linear, 0, 1)), 0, 1)
