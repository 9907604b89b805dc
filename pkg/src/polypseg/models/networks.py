"""The five run architectures behind one forward contract."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from polypseg.errors import ConfigError, ShapeError
from polypseg.models.config import ARCHS, ModelConfig
from polypseg.models.layers import (
    Activation,
    InceptionStage,
    PlainBlock,
    ResidualBlock,
    ReverseAttention,
    UpConv,
    conv,
)


class ModelOutput(NamedTuple):
    main: torch.Tensor
    aux: tuple[torch.Tensor, ...] = ()


class SegModel(nn.Module):
    """Base class: validates input geometry and returns a ModelOutput."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config

    def check_input(self, x: torch.Tensor):
        cfg = self.config
        if x.dim() != 4:
            raise ShapeError(f"expected a batch N x C x H x W, got shape {tuple(x.shape)}")
        n, c, h, w = x.shape
        if n < 1:
            raise ShapeError("batch must hold at least one image")
        if c != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} input channels, got {c}")
        step = 2 ** cfg.depth
        for name, size in (("height", h), ("width", w)):
            if size % step:
                raise ShapeError(f"input {name} {size} is not divisible by 2^depth = {step}")

    def forward(self, x: torch.Tensor) -> ModelOutput:
        self.check_input(x)
        return self._forward(x)

    def _forward(self, x):  # pragma: no cover - abstract
        raise NotImplementedError


def _widths(cfg: ModelConfig) -> list[int]:
    return [cfg.base_width * 2**i for i in range(cfg.depth + 1)]


def _activation(cfg: ModelConfig) -> Activation:
    return Activation(cfg.leaky_slope if cfg.arch == "leaky-unet" else None)


def _bottleneck(cfg: ModelConfig, in_ch: int, out_ch: int, act: Activation) -> nn.Module:
    blocks = [ResidualBlock(in_ch, out_ch, act, cfg.dilation_rates[0])]
    blocks += [ResidualBlock(out_ch, out_ch, act, d) for d in cfg.dilation_rates[1:]]
    return nn.Sequential(*blocks)


def _stage(cfg: ModelConfig, in_ch: int, out_ch: int, act: Activation) -> nn.Module:
    if cfg.arch in ("unet", "leaky-unet"):
        return PlainBlock(in_ch, out_ch, act)
    if cfg.arch in ("resunet", "pranet-lite"):
        return ResidualBlock(in_ch, out_ch, act)
    if cfg.arch == "inception-unet":
        return InceptionStage(in_ch, out_ch, act)
    raise ConfigError(f"unknown arch {cfg.arch!r}")


class Encoder(nn.Module):
    """Stage blocks separated by 2x2 max-pooling; returns every stage's features."""

    def __init__(self, cfg: ModelConfig, act: Activation):
        super().__init__()
        widths = _widths(cfg)
        stages = [_stage(cfg, cfg.in_channels, widths[0], act)]
        for i in range(1, cfg.depth + 1):
            if i == cfg.depth and cfg.arch in ("resunet", "pranet-lite"):
                stages.append(_bottleneck(cfg, widths[i - 1], widths[i], act))
            else:
                stages.append(_stage(cfg, widths[i - 1], widths[i], act))
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        feats = []
        for i, stage in enumerate(self.stages):
            if i:
                x = F.max_pool2d(x, 2)
            x = stage(x)
            feats.append(x)
        return feats


class UNetFamily(SegModel):
    """U-shaped encoder/decoder with skip concatenation.

    Serves unet, leaky-unet, resunet and inception-unet; they differ only in
    the stage block and the activation.
    """

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        act = _activation(config)
        widths = _widths(config)
        self.encoder = Encoder(config, act)
        self.up = nn.ModuleList(UpConv(widths[i + 1], widths[i], act) for i in range(config.depth))
        self.decoder = nn.ModuleList(_stage(config, 2 * widths[i], widths[i], act) for i in range(config.depth))
        self.head = conv(widths[0], 1, 1)

    def _forward(self, x):
        feats = self.encoder(x)
        y = feats[-1]
        for i in reversed(range(self.config.depth)):
            y = self.decoder[i](torch.cat([feats[i], self.up[i](y)], dim=1))
        return ModelOutput(self.head(y), ())


class PartialDecoder(nn.Module):
    """Aggregates the three deepest encoder levels into one coarse logit map.

    Each level is reduced by a 1x1 conv; deeper levels are upsampled and
    multiplied into shallower ones before a fusion conv.
    """

    def __init__(self, in_widths: tuple[int, int, int], ch: int, act: Activation):
        super().__init__()
        deep, mid, shallow = in_widths
        self.reduce_deep = conv(deep, ch, 1)
        self.reduce_mid = conv(mid, ch, 1)
        self.reduce_shallow = conv(shallow, ch, 1)
        self.up_deep = conv(ch, ch, 3)
        self.up_mid = conv(ch, ch, 3)
        self.up_deep2 = conv(ch, ch, 3)
        self.fuse = conv(3 * ch, ch, 3)
        self.out = conv(ch, 1, 1)
        self.act = act

    def forward(self, deep, mid, shallow):
        act = self.act
        up = lambda t: F.interpolate(t, scale_factor=2, mode="bilinear", align_corners=False)  # noqa: E731
        r1 = act(self.reduce_deep(deep))
        r2 = act(self.reduce_mid(mid))
        r3 = act(self.reduce_shallow(shallow))
        p2 = act(self.up_deep(up(r1))) * r2
        p3 = act(self.up_mid(up(p2))) * r3
        d2 = act(self.up_deep2(up(up(r1))))
        return self.out(act(self.fuse(torch.cat([p3, up(p2), d2], dim=1))))


class PraNetLite(SegModel):
    """Residual encoder, partial decoder and a three-stage reverse-attention cascade.

    main is the shallowest refinement; aux holds the coarse map and the two
    deeper refinements, all resized bilinearly to the input resolution.
    """

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        act = _activation(config)
        widths = _widths(config)
        ch = config.base_width
        self.encoder = Encoder(config, act)
        self.decoder = PartialDecoder((widths[-1], widths[-2], widths[-3]), ch, act)
        self.attention = nn.ModuleList(ReverseAttention(widths[-1 - k], ch, act) for k in range(3))

    def _forward(self, x):
        size = x.shape[-2:]
        feats = self.encoder(x)
        levels = [feats[-1], feats[-2], feats[-3]]
        coarse = self.decoder(*levels)
        sides = [coarse]
        s = coarse
        for ra, f in zip(self.attention, levels):
            s = F.interpolate(s, size=f.shape[-2:], mode="bilinear", align_corners=False)
            s = ra(f, s)
            sides.append(s)
        full = [F.interpolate(t, size=size, mode="bilinear", align_corners=False) for t in sides]
        return ModelOutput(full[-1], tuple(full[:-1]))


def init_parameters(model: nn.Module, seed: int):
    """Seeded fan-in scaled uniform init: He bound on conv weights, 1/sqrt(fan_in) on biases."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.weight[0].numel()
                bound = math.sqrt(6.0 / fan_in)
                m.weight.copy_(torch.rand(m.weight.shape, generator=g, dtype=torch.float64) * 2 * bound - bound)
                if m.bias is not None:
                    b = 1.0 / math.sqrt(fan_in)
                    m.bias.copy_(torch.rand(m.bias.shape, generator=g, dtype=torch.float64) * 2 * b - b)
            elif isinstance(m, nn.GroupNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)


def build_model(config: ModelConfig) -> SegModel:
    if config.arch not in ARCHS:
        raise ConfigError(f"unknown arch {config.arch!r}; valid: {', '.join(ARCHS)}")
    model = PraNetLite(config) if config.arch == "pranet-lite" else UNetFamily(config)
    init_parameters(model, config.seed)
    return model


def forward(model: SegModel, batch: torch.Tensor) -> ModelOutput:
    return model(batch)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
