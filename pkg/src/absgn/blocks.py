"""Learnable building blocks: Conv+PReLU units, attention modules, GSA, MGDB and DCR."""

from dataclasses import dataclass

import torch
import torch.nn as nn

PRELU_INIT = 0.25


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    dilation: int = 1
    has_prelu: bool = True

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {self.kernel}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel - 1) // 2


@dataclass(frozen=True)
class GSAConfig:
    channels: int
    shrunk_channels: int | None = None

    def __post_init__(self):
        if self.shrunk_channels is None:
            object.__setattr__(self, "shrunk_channels", max(1, self.channels // 2))
        if not 1 <= self.shrunk_channels <= self.channels:
            raise ValueError(
                f"shrunk_channels must lie in [1, {self.channels}], got {self.shrunk_channels}"
            )


@dataclass(frozen=True)
class MGDBConfig:
    channels: int
    growth: int | None = None
    dilations: tuple[int, ...] = (4, 2, 1)
    reduction: int = 8

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.growth is None:
            object.__setattr__(self, "growth", max(1, self.channels // 2))
        if self.growth < 1:
            raise ValueError(f"growth must be >= 1, got {self.growth}")
        if not self.dilations or self.dilations[-1] != 1:
            raise ValueError(f"dilations must end at 1, got {self.dilations}")
        # all-ones is the "no dilation" ablation; anything else must be strictly decreasing
        if any(d != 1 for d in self.dilations) and any(
            a <= b for a, b in zip(self.dilations, self.dilations[1:])
        ):
            raise ValueError(f"dilations must be strictly decreasing, got {self.dilations}")


def _check_channels(x: torch.Tensor, expected: int, where: str) -> None:
    if x.dim() != 4 or x.shape[1] != expected:
        raise ValueError(f"{where}: expected [B, {expected}, H, W], got {tuple(x.shape)}")


class ConvPReLU(nn.Module):
    """Size-preserving zero-padded convolution, optionally followed by a per-channel PReLU."""

    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        self.conv = nn.Conv2d(
            spec.in_channels,
            spec.out_channels,
            spec.kernel,
            padding=spec.padding,
            dilation=spec.dilation,
            bias=True,
        )
        self.act = nn.PReLU(spec.out_channels, init=PRELU_INIT) if spec.has_prelu else None

    def forward(self, x):
        _check_channels(x, self.spec.in_channels, "conv_prelu")
        x = self.conv(x)
        if self.act is not None:
            x = self.act(x)
        return x


def conv_prelu(in_channels, out_channels, kernel=3, dilation=1, has_prelu=True) -> ConvPReLU:
    return ConvPReLU(ConvSpec(in_channels, out_channels, kernel, dilation, has_prelu))


def conv1x1(in_channels, out_channels) -> ConvPReLU:
    return conv_prelu(in_channels, out_channels, kernel=1, has_prelu=False)


class SpatialAttention(nn.Module):
    """Channel-mean and channel-max maps -> 7x7 conv -> sigmoid gate shared by all channels."""

    def __init__(self, kernel=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2, bias=True)

    @staticmethod
    def descriptor(x):
        return torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)

    def attention_map(self, x):
        return torch.sigmoid(self.conv(self.descriptor(x)))

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] < 1:
            raise ValueError(f"spatial_attention: expected [B, C, H, W], got {tuple(x.shape)}")
        return x * self.attention_map(x)


class ChannelAttention(nn.Module):
    """Global avg/max pooled vectors through a shared bottleneck, summed, sigmoid-gated."""

    def __init__(self, channels, reduction=8):
        super().__init__()
        if channels % reduction:
            raise ValueError(
                f"channel_attention: {channels} channels not divisible by reduction {reduction}"
            )
        self.channels = channels
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, channels // reduction, 1, bias=True),
            nn.ReLU(),
            nn.Conv2d(channels // reduction, channels, 1, bias=True),
        )

    @staticmethod
    def pooled(x):
        return x.mean(dim=(2, 3), keepdim=True), x.amax(dim=(2, 3), keepdim=True)

    def scale(self, x):
        avg, mx = self.pooled(x)
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))

    def forward(self, x):
        _check_channels(x, self.channels, "channel_attention")
        return x * self.scale(x)


class GSA(nn.Module):
    """Global spatial attention block.

    A conv+PReLU feeds global average and max pooling; their mean is a
    single C-vector which is replicated over the map, shrunk to C1 channels
    with a 1x1 conv+PReLU, gated by spatial attention, and fused with the
    block input by a final 3x3 conv+PReLU.

    ``use_spa=False`` drops the spatial-attention gate; that configuration
    is the stand-in for the GIA comparator in the ablations.
    """

    def __init__(self, cfg: GSAConfig, use_spa=True):
        super().__init__()
        c, c1 = cfg.channels, cfg.shrunk_channels
        self.cfg = cfg
        self.pre = conv_prelu(c, c)
        self.shrink = conv_prelu(c, c1, kernel=1)
        self.spa = SpatialAttention() if use_spa else None
        self.fuse = conv_prelu(c + c1, c)

    def global_vector(self, x):
        t = self.pre(x)
        avg, mx = ChannelAttention.pooled(t)
        return (avg + mx) / 2

    def forward(self, x):
        _check_channels(x, self.cfg.channels, "gsa")
        g = self.global_vector(x).expand(-1, -1, *x.shape[-2:])
        g = self.shrink(g)
        if self.spa is not None:
            g = self.spa(g)
        return self.fuse(torch.cat([x, g], dim=1))


class MGDB(nn.Module):
    """Multi-level guided dense block.

    Branch i sees the input plus every earlier branch output, so the
    large-dilation branches guide the smaller ones. A 1x1 conv fuses the
    dense stack back to C channels; the fused map is channel-gated and
    added to the input.
    """

    def __init__(self, cfg: MGDBConfig, attention=True):
        super().__init__()
        self.cfg = cfg
        c, g = cfg.channels, cfg.growth
        self.branches = nn.ModuleList(
            conv_prelu(c + i * g, g, kernel=3, dilation=d) for i, d in enumerate(cfg.dilations)
        )
        self.fuse = conv1x1(c + len(cfg.dilations) * g, c)
        self.attention = ChannelAttention(c, cfg.reduction) if attention else None

    def forward(self, x):
        _check_channels(x, self.cfg.channels, type(self).__name__.lower())
        feats = [x]
        for branch in self.branches:
            feats.append(branch(torch.cat(feats, dim=1)))
        fused = self.fuse(torch.cat(feats, dim=1))
        if self.attention is not None:
            fused = self.attention(fused)
        return x + fused


class DCR(MGDB):
    """Plain dense residual block: undilated, no channel attention."""

    def __init__(self, cfg: MGDBConfig):
        plain = MGDBConfig(
            cfg.channels, cfg.growth, dilations=(1,) * len(cfg.dilations), reduction=cfg.reduction
        )
        super().__init__(plain, attention=False)


def receptive_support(kernel: int, dilation: int) -> int:
    """Side length of the input window one dilated kernel touches."""
    return dilation * (kernel - 1) + 1


def kaiming_init_(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Kaiming-normal conv weights (PReLU-aware gain), zero biases, default PReLU slopes."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(
                m.weight, a=PRELU_INIT, mode="fan_in", nonlinearity="leaky_relu", generator=generator
            )
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.PReLU):
            nn.init.constant_(m.weight, PRELU_INIT)
        elif isinstance(m, nn.BatchNorm2d):
            m.reset_parameters()
