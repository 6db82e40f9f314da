"""Dual-head U-Net: content encoder, appearance encoder and a shared decoder.

Both encoders are bottleneck ResNets without batch normalisation.  Only the
content encoder normalises its blocks with instance normalisation; the
appearance encoder keeps raw activations and average-pools the output of
each of its four stages into one appearance vector.  The decoder mirrors the
encoder, takes skip connections from the content maps and re-injects
appearance with product channel attention at every stage.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError, SizeError
from .pixelcore import Image

IN_EPS = 1e-5


@dataclass
class NetConfig:
    width_multiplier: float = 0.5
    block_depths: tuple[int, int, int, int] = (3, 4, 6, 3)
    base_channels: int = 64
    patch_size: int = 128
    expansion: int = 4
    affine_in: bool = True
    toy_preset: bool = False

    def __post_init__(self):
        if self.toy_preset:
            self.width_multiplier = 0.125
            self.block_depths = (1, 1, 1, 1)
            self.expansion = 1
        self.block_depths = tuple(int(d) for d in self.block_depths)
        if len(self.block_depths) != 4 or min(self.block_depths) < 1:
            raise ConfigError(f"need four positive block depths, got {self.block_depths}")
        if self.patch_size % 32:
            raise ConfigError(f"patch_size must be divisible by 32, got {self.patch_size}")
        if any(c < 4 for c in self.block_channels) or self.stem_channels < 1:
            raise ConfigError(f"channel counts too small: {self.block_channels}")

    @classmethod
    def toy(cls, patch_size: int = 64, **kw) -> "NetConfig":
        return cls(patch_size=patch_size, toy_preset=True, **kw)

    @property
    def stem_channels(self) -> int:
        return _exact_int(self.base_channels * self.width_multiplier)

    @property
    def inner_channels(self) -> list[int]:
        return [_exact_int(self.base_channels * self.width_multiplier * 2**b) for b in range(4)]

    @property
    def block_channels(self) -> list[int]:
        return [c * self.expansion for c in self.inner_channels]

    @property
    def appearance_dim(self) -> int:
        return sum(self.block_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_depths"] = list(self.block_depths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        toy = d.pop("toy_preset", False)
        cfg = cls(**d)
        cfg.toy_preset = toy
        return cfg


def _exact_int(v: float) -> int:
    if abs(v - round(v)) > 1e-9:
        raise ConfigError(f"channel count {v} is not an integer")
    return int(round(v))


# -- primitives --------------------------------------------------------------------

def instance_norm(x: torch.Tensor, eps: float = IN_EPS) -> torch.Tensor:
    """Standardise every (sample, channel) plane of an N x C x H x W tensor."""
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps)


def channel_attention(x: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    """Scale channel ``c`` of sample ``n`` by ``a[n, c]``."""
    if a.dim() != 2 or a.shape != x.shape[:2]:
        raise ShapeError(f"attention vector {tuple(a.shape)} does not match features {tuple(x.shape)}")
    return x * a[:, :, None, None]


class InstanceNorm(nn.Module):
    def __init__(self, channels: int, eps: float = IN_EPS):
        super().__init__()
        self.channels = channels
        self.eps = eps

    def forward(self, x):
        return instance_norm(x, self.eps)


class ChannelAffine(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return x * self.weight[None, :, None, None] + self.bias[None, :, None, None]


def _norm(channels: int, use_in: bool, affine: bool) -> nn.Module:
    if not use_in:
        return nn.Identity()
    if affine:
        return nn.Sequential(InstanceNorm(channels), ChannelAffine(channels))
    return InstanceNorm(channels)


def _conv(cin, cout, k, stride=1, bias=True):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=bias,
                     padding_mode="replicate" if k > 1 else "zeros")


class Bottleneck(nn.Module):
    def __init__(self, cin, inner, cout, stride=1, use_in=False, affine=True):
        super().__init__()
        bias = not use_in
        self.conv1 = _conv(cin, inner, 1, bias=bias)
        self.norm1 = _norm(inner, use_in, affine)
        self.conv2 = _conv(inner, inner, 3, stride=stride, bias=bias)
        self.norm2 = _norm(inner, use_in, affine)
        self.conv3 = _conv(inner, cout, 1, bias=bias)
        self.norm3 = _norm(cout, use_in, affine)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(_conv(cin, cout, 1, stride=stride, bias=bias),
                                          _norm(cout, use_in, affine))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = F.relu(self.norm2(self.conv2(h)))
        h = self.norm3(self.conv3(h))
        return F.relu(h + self.shortcut(x))


class Encoder(nn.Module):
    """Scaled ResNet-50 trunk returning the output of each of its four stages."""

    def __init__(self, cfg: NetConfig, use_in: bool):
        super().__init__()
        self.stem = _conv(3, cfg.stem_channels, 7, stride=2)
        stages = []
        cin = cfg.stem_channels
        for b, depth in enumerate(cfg.block_depths):
            blocks = []
            for i in range(depth):
                stride = 2 if (i == 0 and b > 0) else 1
                blocks.append(Bottleneck(cin, cfg.inner_channels[b], cfg.block_channels[b],
                                         stride, use_in, cfg.affine_in))
                cin = cfg.block_channels[b]
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)

    def forward(self, x) -> list[torch.Tensor]:
        h = F.max_pool2d(F.relu(self.stem(x)), 3, stride=2, padding=1)
        maps = []
        for stage in self.stages:
            h = stage(h)
            maps.append(h)
        return maps


class Decoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        ch = cfg.block_channels
        self.proj = nn.ModuleList(nn.Linear(cfg.appearance_dim, c) for c in ch)
        for p in self.proj:
            nn.init.normal_(p.weight, std=0.01)
            nn.init.ones_(p.bias)
        # up[b] brings level b+1 to the resolution and width of level b.
        self.up = nn.ModuleList(_conv(ch[b + 1], ch[b], 3) for b in range(3))
        self.fuse = nn.ModuleList(_conv(2 * ch[b], ch[b], 1) for b in range(3))
        self.stages = nn.ModuleList(
            nn.Sequential(*[Bottleneck(ch[b], cfg.inner_channels[b], ch[b]) for _ in range(d)])
            for b, d in enumerate(cfg.block_depths))
        s = cfg.stem_channels
        self.head_up1 = _conv(ch[0], s, 3)
        self.head_up2 = _conv(s, s, 3)
        self.head_out = _conv(s, 3, 3)

    def forward(self, content: list[torch.Tensor], appearance: torch.Tensor) -> torch.Tensor:
        h = content[3]
        for b in (3, 2, 1, 0):
            if b < 3:
                h = self.up[b](_upsample(h))
                h = F.relu(self.fuse[b](torch.cat([h, content[b]], dim=1)))
            h = channel_attention(h, self.proj[b](appearance))
            h = self.stages[b](h)
        h = F.relu(self.head_up1(_upsample(h)))
        h = F.relu(self.head_up2(_upsample(h)))
        return F.hardsigmoid(self.head_out(h))


def _upsample(h):
    return F.interpolate(h, scale_factor=2, mode="nearest")


class DualHeadUNet(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.config = cfg or NetConfig()
        self.content_encoder = Encoder(self.config, use_in=True)
        self.appearance_encoder = Encoder(self.config, use_in=False)
        self.decoder = Decoder(self.config)

    def _check(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise SizeError(f"input size {tuple(x.shape[2:])} is not divisible by 32")

    def encode_content(self, x: torch.Tensor) -> list[torch.Tensor]:
        self._check(x)
        return self.content_encoder(x)

    def appearance_maps(self, x: torch.Tensor) -> list[torch.Tensor]:
        self._check(x)
        return self.appearance_encoder(x)

    def encode_appearance(self, x: torch.Tensor) -> torch.Tensor:
        return pool_appearance(self.appearance_maps(x))

    def decode(self, content: list[torch.Tensor], appearance: torch.Tensor) -> torch.Tensor:
        expected = self.config.block_channels
        if len(content) != 4 or [c.shape[1] for c in content] != expected:
            raise ShapeError(f"content maps do not match block widths {expected}")
        if appearance.dim() != 2 or appearance.shape[1] != self.config.appearance_dim:
            raise ShapeError(f"appearance vector must have length {self.config.appearance_dim}")
        return self.decoder(content, appearance)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode_content(x), self.encode_appearance(x))


def pool_appearance(maps: list[torch.Tensor]) -> torch.Tensor:
    """Concatenate the spatial averages of each stage output."""
    return torch.cat([m.mean(dim=(2, 3)) for m in maps], dim=1)


def image_to_tensor(img: Image | np.ndarray, dtype=torch.float32) -> torch.Tensor:
    px = img.pixels if isinstance(img, Image) else np.asarray(img)
    t = torch.from_numpy(np.ascontiguousarray(px.transpose(2, 0, 1))).to(dtype)
    return t[None]


def tensor_to_pixels(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy()[0].transpose(1, 2, 0)


def encode_content(model: DualHeadUNet, img: Image) -> list[torch.Tensor]:
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model.encode_content(image_to_tensor(img, dtype))


def encode_appearance(model: DualHeadUNet, img: Image) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        return model.encode_appearance(image_to_tensor(img, dtype))


def decode(model: DualHeadUNet, content, appearance) -> Image:
    with torch.no_grad():
        out = model.decode(content, appearance)
    return Image(tensor_to_pixels(out))


def parameter_groups(model: DualHeadUNet) -> dict[str, list[tuple[str, nn.Parameter]]]:
    return {
        name: list(getattr(model, name).named_parameters())
        for name in ("content_encoder", "appearance_encoder", "decoder")
    }
