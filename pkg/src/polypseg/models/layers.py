"""Building blocks shared by the five architectures."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from polypseg.errors import DomainError, ShapeError

NORM_GROUPS = 4


def leaky_relu(x: torch.Tensor, slope: float) -> torch.Tensor:
    """``x`` where ``x >= 0``, ``slope * x`` elsewhere."""
    if slope < 0:
        raise DomainError(f"leaky slope must be >= 0, got {slope}")
    return torch.where(x >= 0, x, x * slope)


class Activation(nn.Module):
    """ReLU when ``slope`` is None, otherwise a leaky ReLU with that slope."""

    def __init__(self, slope: Optional[float] = None):
        super().__init__()
        if slope is not None and slope < 0:
            raise DomainError(f"leaky slope must be >= 0, got {slope}")
        self.slope = slope

    def forward(self, x):
        if self.slope is None:
            return F.relu(x)
        return leaky_relu(x, self.slope)

    def extra_repr(self):
        return "relu" if self.slope is None else f"leaky slope={self.slope}"


def conv(in_ch: int, out_ch: int, kernel: int = 3, dilation: int = 1, bias: bool = True) -> nn.Conv2d:
    # "same" padding for odd kernels
    return nn.Conv2d(in_ch, out_ch, kernel, padding=dilation * (kernel // 2), dilation=dilation, bias=bias)


def group_norm(channels: int) -> nn.GroupNorm:
    # fall back to fewer groups when the width is not a multiple of 4
    return nn.GroupNorm(math.gcd(NORM_GROUPS, channels), channels)


def _check_channels(x: torch.Tensor, expected: int, who: str):
    if x.dim() != 4 or x.shape[1] != expected:
        raise ShapeError(f"{who} expects N x {expected} x H x W input, got {tuple(x.shape)}")


class PlainBlock(nn.Module):
    """5x5 conv -> act -> 3x3 conv -> act."""

    def __init__(self, in_ch: int, out_ch: int, act: Activation):
        super().__init__()
        self.in_ch = in_ch
        self.conv1 = conv(in_ch, out_ch, 5)
        self.conv2 = conv(out_ch, out_ch, 3)
        self.act = act

    def forward(self, x):
        _check_channels(x, self.in_ch, "PlainBlock")
        return self.act(self.conv2(self.act(self.conv1(x))))


class ResidualBlock(nn.Module):
    """Pre-activation residual unit: ``shortcut(x) + F(x)``.

    ``F`` is (norm -> act -> dilated 3x3 conv) twice. The shortcut is the
    identity when widths match and a 1x1 projection otherwise.
    """

    def __init__(self, in_ch: int, out_ch: int, act: Activation, dilation: int = 1):
        super().__init__()
        if dilation < 1:
            raise DomainError("dilation must be a positive integer")
        self.in_ch = in_ch
        self.dilation = dilation
        self.norm1 = group_norm(in_ch)
        self.conv1 = conv(in_ch, out_ch, 3, dilation)
        self.norm2 = group_norm(out_ch)
        self.conv2 = conv(out_ch, out_ch, 3, dilation)
        self.act = act
        self.shortcut = nn.Identity() if in_ch == out_ch else conv(in_ch, out_ch, 1)

    def branch(self, x):
        y = self.conv1(self.act(self.norm1(x)))
        return self.conv2(self.act(self.norm2(y)))

    def forward(self, x):
        _check_channels(x, self.in_ch, "ResidualBlock")
        return self.shortcut(x) + self.branch(x)


class InceptionBlock(nn.Module):
    """Four parallel branches concatenated along channels.

    1x1 | 1x1 -> 3x3 | 1x1 -> 5x5 | 3x3 max-pool -> 1x1, each branch ending in
    norm -> act. ``widths`` are the output widths of the four branches and
    ``reduce`` the widths of the 1x1 reductions ahead of the 3x3 and 5x5 convs.
    """

    def __init__(
        self,
        in_ch: int,
        widths: Sequence[int],
        act: Activation,
        reduce: Optional[Sequence[int]] = None,
    ):
        super().__init__()
        if len(widths) != 4 or min(widths) < 1:
            raise DomainError(f"need four positive branch widths, got {widths}")
        b1, b3, b5, bp = widths
        r3, r5 = reduce if reduce is not None else (max(1, in_ch // 2), max(1, in_ch // 2))
        self.in_ch = in_ch
        self.out_ch = sum(widths)
        self.act = act

        self.b1_conv = conv(in_ch, b1, 1)
        self.b1_norm = group_norm(b1)
        self.b3_reduce = conv(in_ch, r3, 1)
        self.b3_conv = conv(r3, b3, 3)
        self.b3_norm = group_norm(b3)
        self.b5_reduce = conv(in_ch, r5, 1)
        self.b5_conv = conv(r5, b5, 5)
        self.b5_norm = group_norm(b5)
        self.pool_conv = conv(in_ch, bp, 1)
        self.pool_norm = group_norm(bp)

    def forward(self, x):
        _check_channels(x, self.in_ch, "InceptionBlock")
        act = self.act
        y1 = act(self.b1_norm(self.b1_conv(x)))
        y3 = act(self.b3_norm(self.b3_conv(act(self.b3_reduce(x)))))
        y5 = act(self.b5_norm(self.b5_conv(act(self.b5_reduce(x)))))
        yp = act(self.pool_norm(self.pool_conv(F.max_pool2d(x, 3, stride=1, padding=1))))
        return torch.cat([y1, y3, y5, yp], dim=1)


class InceptionStage(nn.Module):
    """Inception block followed by a 3x3 conv that restores the stage width."""

    def __init__(self, in_ch: int, out_ch: int, act: Activation):
        super().__init__()
        b = max(1, -(-out_ch // 4))
        self.inception = InceptionBlock(in_ch, (b, b, b, b), act)
        self.conv = conv(4 * b, out_ch, 3)
        self.act = act

    def forward(self, x):
        return self.act(self.conv(self.inception(x)))


class ReverseAttention(nn.Module):
    """Refines a coarse map by attending to what it currently misses.

    ``refined = coarse + refiner((1 - sigmoid(coarse)) * features)``
    """

    def __init__(self, in_ch: int, mid_ch: int, act: Activation):
        super().__init__()
        self.in_ch = in_ch
        self.conv1 = conv(in_ch, mid_ch, 3)
        self.conv2 = conv(mid_ch, mid_ch, 3)
        self.conv3 = conv(mid_ch, 1, 3)
        self.act = act

    @staticmethod
    def attention(coarse_logits: torch.Tensor) -> torch.Tensor:
        return 1.0 - torch.sigmoid(coarse_logits)

    def refiner(self, x):
        return self.conv3(self.act(self.conv2(self.act(self.conv1(x)))))

    def forward(self, features, coarse_logits):
        _check_channels(features, self.in_ch, "ReverseAttention")
        if coarse_logits.dim() != 4 or coarse_logits.shape[1] != 1:
            raise ShapeError(f"coarse logits must be N x 1 x h x w, got {tuple(coarse_logits.shape)}")
        if features.shape[-2:] != coarse_logits.shape[-2:] or features.shape[0] != coarse_logits.shape[0]:
            raise ShapeError(
                f"features {tuple(features.shape)} and coarse logits {tuple(coarse_logits.shape)} are not aligned"
            )
        return coarse_logits + self.refiner(self.attention(coarse_logits) * features)


class UpConv(nn.Module):
    """Nearest-neighbour x2 resize, 3x3 conv, act."""

    def __init__(self, in_ch: int, out_ch: int, act: Activation):
        super().__init__()
        self.conv = conv(in_ch, out_ch, 3)
        self.act = act

    def forward(self, x):
        return self.act(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")))
