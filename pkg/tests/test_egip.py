import numpy as np
import pytest
import torch

from disque.egip import (
    EgipRequest, Mode, egip_apply, egtm, reconstruct, seam_metric, tile_boundaries, tile_window,
    tile_starts,
)
from disque.errors import ColorspaceError, ConfigError, ShapeError
from disque.network import NetConfig
from disque.pixelcore import Colorspace, Image
from disque.synthetic import colorful_image


@pytest.fixture(scope="module")
def pics():
    return [colorful_image(s, 160) for s in range(3)]


def test_tile_geometry():
    assert tile_starts(64, 64) == [0]
    assert tile_starts(160, 64) == [0, 32, 64, 96]
    assert tile_starts(170, 64) == [0, 32, 64, 96, 106]
    assert tile_boundaries(128, 64) == [32, 64, 96]
    size = (160, 160)
    total = np.zeros(size)
    for y in tile_starts(160, 64):
        for x in tile_starts(160, 64):
            total[y:y + 64, x:x + 64] += tile_window(64, y, x, size)
    assert total.min() > 0
    interior = tile_window(64, 32, 32, size)
    assert interior[0].max() == 0 and interior[:, -1].max() == 0
    assert tile_window(64, 0, 0, size)[0, 0] == 1


def test_zero_delta_is_exact_self_reconstruction(toy_model, pics):
    for size in (64, 100, 160):
        x = Image(pics[0].pixels[:size, :size])
        ex = Image(pics[1].pixels[:64, :64])
        out = egip_apply(EgipRequest(ex, ex, x, Mode.MIXING), toy_model)
        np.testing.assert_array_equal(out.pixels, reconstruct(toy_model, x).pixels)
        assert out.pixels.shape == x.pixels.shape


def test_colocated_zero_delta(toy_model, pics):
    out = egip_apply(EgipRequest(pics[0], pics[0], pics[0]), toy_model)
    np.testing.assert_array_equal(out.pixels, reconstruct(toy_model, pics[0]).pixels)


def test_modes_share_content_path(toy_model, pics):
    """Only the appearance handed to the decoder differs between modes."""
    seen = {}
    real_decode = toy_model.decode

    def spy(content, appearance, _mode=None):
        seen.setdefault(spy.mode, []).append(([c.clone() for c in content], appearance.clone()))
        return real_decode(content, appearance)

    toy_model.decode = spy
    try:
        for mode in Mode:
            spy.mode = mode
            egip_apply(EgipRequest(pics[1], pics[2], pics[0], mode), toy_model)
    finally:
        del toy_model.decode
    mix, rep = seen[Mode.MIXING], seen[Mode.REPLACEMENT]
    assert len(mix) == len(rep)
    for (c_m, a_m), (c_r, a_r) in zip(mix, rep):
        for u, v in zip(c_m, c_r):
            assert torch.equal(u, v)
        assert not torch.equal(a_m, a_r)


def test_replacement_uses_target_appearance(toy_model, pics):
    x = Image(pics[0].pixels[:64, :64])
    src = Image(pics[1].pixels[:64, :64])
    tgt = Image(pics[2].pixels[:64, :64])
    a = egip_apply(EgipRequest(src, tgt, x, "replacement"), toy_model)
    b = egip_apply(EgipRequest(tgt, tgt, x, "replacement"), toy_model)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_request_validation(toy_model, pics):
    with pytest.raises(ConfigError):
        EgipRequest(pics[0], pics[0], pics[0], "swap")
    with pytest.raises(ShapeError):
        EgipRequest(pics[0], Image(pics[1].pixels[:64, :64]), pics[0])
    with pytest.raises(ConfigError):
        egip_apply(EgipRequest(pics[0], pics[0], pics[0]), None)


def test_egtm_requires_pq(toy_model, pics):
    with pytest.raises(ColorspaceError):
        egtm(pics[0], pics[1], pics[2], toy_model)
    hdr = Image(pics[0].pixels, Colorspace.PQ_BT2100)
    out = egtm(hdr, hdr, pics[1], toy_model)
    assert out.colorspace is Colorspace.SRGB and out.pixels.shape == hdr.pixels.shape


def test_egtm_null_example_is_self_reconstruction(toy_model, pics):
    hdr = Image(pics[0].pixels, Colorspace.PQ_BT2100)
    ex = Image(pics[1].pixels, Colorspace.PQ_BT2100)
    out = egtm(hdr, ex, ex.with_pixels(ex.pixels, Colorspace.SRGB), toy_model)
    np.testing.assert_array_equal(out.pixels, reconstruct(toy_model, hdr).pixels)


class _TileMeanModel(torch.nn.Module):
    """Stub whose output is each tile's mean colour, so neighbouring tiles disagree."""

    def __init__(self, patch):
        super().__init__()
        self.config = NetConfig.toy(patch)
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def encode_content(self, x):
        return [x]

    def encode_appearance(self, x):
        return x.mean(dim=(-2, -1))

    def decode(self, content, appearance):
        return appearance[..., None, None].expand_as(content[0]).clone()


def test_blending_hides_disagreeing_tiles(pics):
    model = _TileMeanModel(64)
    x = pics[1]
    out = reconstruct(model, x).pixels
    seam, interior = seam_metric(out, 64)
    assert seam <= 2 * interior
    # the same tiles pasted without blending show hard seams
    pasted = np.zeros_like(x.pixels)
    for y in tile_starts(160, 64):
        for xx in tile_starts(160, 64):
            pasted[y:y + 64, xx:xx + 64] = x.pixels[y:y + 64, xx:xx + 64].mean(axis=(0, 1))
    seam, interior = seam_metric(pasted, 64)
    assert seam > 2 * interior


def test_seam_metric_detects_hard_seam():
    px = np.tile(np.linspace(0, 1, 128)[None, :, None], (128, 1, 3))
    px[:, 64:] += 0.2
    seam, interior = seam_metric(px, 64)
    assert seam > 2 * interior
