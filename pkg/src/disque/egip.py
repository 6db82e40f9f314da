"""Example-guided image processing.

An example pair (source, target) demonstrates a transform.  The transform is
read off as the appearance difference ``da = A(target) - A(source)`` and
applied to a new input by decoding its own content with ``A(input) + da``
(mixing).  The replacement baseline decodes with ``A(target)`` directly.

Inputs larger than the model's patch size are processed as overlapping
tiles at the patch size (stride of half a patch) and blended with linear
ramps.  When the example images have the same size as the input, each tile
takes its delta from the co-located example tiles; otherwise one global
delta is computed from the whole example images.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ShapeError
from .network import DualHeadUNet, image_to_tensor
from .pixelcore import Colorspace, Image


class Mode(str, enum.Enum):
    MIXING = "mixing"
    REPLACEMENT = "replacement"


@dataclass
class EgipRequest:
    example_src: Image
    example_tgt: Image
    input_src: Image
    mode: Mode = Mode.MIXING

    def __post_init__(self):
        try:
            self.mode = Mode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown EGIP mode {self.mode!r}") from None
        if self.example_src.pixels.shape != self.example_tgt.pixels.shape:
            raise ShapeError("example source and target differ in size")


# -- tiling --------------------------------------------------------------------------------

def _ceil_to(v: int, m: int) -> int:
    return -(-v // m) * m


def _padded_size(h: int, w: int, patch: int) -> tuple[int, int]:
    return max(patch, _ceil_to(h, 32)), max(patch, _ceil_to(w, 32))


def _pad(px: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    ph, pw = size[0] - px.shape[0], size[1] - px.shape[1]
    if ph == 0 and pw == 0:
        return px
    return np.pad(px, ((0, ph), (0, pw), (0, 0)), mode="symmetric")


def tile_starts(length: int, patch: int) -> list[int]:
    """Tile offsets at stride patch/2 covering ``length``; the last tile is end-aligned."""
    if length <= patch:
        return [0]
    stride = patch // 2
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return starts


def _ramp(patch: int, taper_start: bool, taper_end: bool) -> np.ndarray:
    i = np.arange(patch, dtype=np.float64)
    w = np.ones(patch)
    if taper_start:
        w = np.minimum(w, i / (patch / 2))
    if taper_end:
        w = np.minimum(w, (patch - 1 - i) / (patch / 2))
    return w


def tile_window(patch: int, y: int, x: int, size: tuple[int, int]) -> np.ndarray:
    """Linear blending weights for the tile at (y, x).

    Weights fall to zero at tile edges inside the image and stay flat on
    edges that lie on the image border, so every pixel keeps positive total
    weight and no tile edge shows up as a step.
    """
    wy = _ramp(patch, y > 0, y + patch < size[0])
    wx = _ramp(patch, x > 0, x + patch < size[1])
    return np.outer(wy, wx)


def tile_boundaries(length: int, patch: int) -> list[int]:
    """Interior positions where a tile starts or ends."""
    edges = set()
    for s in tile_starts(length, patch):
        edges.update((s, s + patch))
    return sorted(e for e in edges if 0 < e < length)


# -- core -----------------------------------------------------------------------------------

def _model_dtype(model):
    if model is None:
        raise ConfigError("no model loaded")
    return next(model.parameters()).dtype


def _stack(px: np.ndarray, boxes, dtype) -> torch.Tensor:
    return torch.cat([image_to_tensor(px[y:y + h, x:x + w], dtype) for y, x, h, w in boxes])


def _appearance(model, px: np.ndarray, boxes, dtype) -> torch.Tensor:
    with torch.no_grad():
        return model.encode_appearance(_stack(px, boxes, dtype))


def _decode_tiles(model, px, boxes, appearance, dtype, chunk: int = 16) -> list[np.ndarray]:
    out = []
    with torch.no_grad():
        for i in range(0, len(boxes), chunk):
            x = _stack(px, boxes[i:i + chunk], dtype)
            y = model.decode(model.encode_content(x), appearance[i:i + chunk])
            out.extend(t.double().numpy().transpose(1, 2, 0) for t in y)
    return out


def _target_appearance(model, req: EgipRequest, in_px, boxes, size, dtype) -> torch.Tensor:
    """Per-tile appearance vectors handed to the decoder."""
    h, w = req.input_src.height, req.input_src.width
    colocated = req.example_src.pixels.shape == req.input_src.pixels.shape
    if colocated:
        tgt_boxes = boxes
        src_px, tgt_px = _pad(req.example_src.pixels, size), _pad(req.example_tgt.pixels, size)
    else:
        esize = _ceil_to(req.example_src.height, 32), _ceil_to(req.example_src.width, 32)
        src_px, tgt_px = _pad(req.example_src.pixels, esize), _pad(req.example_tgt.pixels, esize)
        tgt_boxes = [(0, 0, *esize)]
    a_tgt = _appearance(model, tgt_px, tgt_boxes, dtype)
    if req.mode is Mode.REPLACEMENT:
        return a_tgt.expand(len(boxes), -1) if not colocated else a_tgt
    delta = a_tgt - _appearance(model, src_px, tgt_boxes, dtype)
    a_in = _appearance(model, in_px, boxes, dtype)
    return a_in + delta


def _run(model: DualHeadUNet, req: EgipRequest | None, img: Image) -> np.ndarray:
    dtype = _model_dtype(model)
    patch = model.config.patch_size
    h, w = img.height, img.width
    size = _padded_size(h, w, patch)
    px = _pad(img.pixels, size)
    if size[0] == patch and size[1] == patch:
        boxes = [(0, 0, patch, patch)]
    else:
        boxes = [(y, x, patch, patch) for y in tile_starts(size[0], patch)
                 for x in tile_starts(size[1], patch)]
    if req is None:
        appearance = _appearance(model, px, boxes, dtype)
    else:
        appearance = _target_appearance(model, req, px, boxes, size, dtype)
    tiles = _decode_tiles(model, px, boxes, appearance, dtype)
    if len(boxes) == 1:
        return tiles[0][:h, :w]
    acc = np.zeros((*size, 3))
    norm = np.zeros((*size, 1))
    for (y, x, th, tw), t in zip(boxes, tiles):
        win = tile_window(patch, y, x, size)[..., None]
        acc[y:y + th, x:x + tw] += win * t
        norm[y:y + th, x:x + tw] += win
    return (acc / norm)[:h, :w]


def reconstruct(model: DualHeadUNet, img: Image) -> Image:
    """Self-reconstruction D(C(x), A(x)) with the same tiling as :func:`egip_apply`."""
    return img.with_pixels(np.clip(_run(model, None, img), 0, 1))


def egip_apply(req: EgipRequest, model: DualHeadUNet) -> Image:
    out = _run(model, req, req.input_src)
    return req.input_src.with_pixels(np.clip(out, 0, 1))


def egtm(hdr_input: Image, example_hdr: Image, example_sdr: Image, model: DualHeadUNet) -> Image:
    """Tone-map a PQ-coded HDR image the way the example pair was tone-mapped."""
    for name, im in (("input", hdr_input), ("example_hdr", example_hdr)):
        if im.colorspace is not Colorspace.PQ_BT2100:
            from .errors import ColorspaceError
            raise ColorspaceError(f"{name} must be PQ-coded, got {im.colorspace.value}")
    out = egip_apply(EgipRequest(example_hdr, example_sdr, hdr_input, Mode.MIXING), model)
    return Image(out.pixels, Colorspace.SRGB)


# -- diagnostics --------------------------------------------------------------------------

def seam_metric(px: np.ndarray, patch: int) -> tuple[float, float]:
    """Compare discontinuities at tile edges with those elsewhere.

    The discontinuity between two adjacent columns (rows) is the median over
    the line of the per-pixel absolute step, taking the largest channel; the
    median keeps isolated content edges crossing the line from dominating.
    Returns the maximum over tile-edge positions and the median over all
    other positions.
    """
    px = np.asarray(px, dtype=np.float64)
    boundary, interior = [], []
    for axis in (0, 1):
        steps = np.median(np.abs(np.diff(px, axis=axis)), axis=1 - axis).max(axis=-1)
        edges = set(tile_boundaries(px.shape[axis], patch))
        for i, s in enumerate(steps):
            (boundary if i + 1 in edges else interior).append(s)
    top = max(boundary) if boundary else 0.0
    return float(top), float(np.median(interior))
