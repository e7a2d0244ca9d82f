"""Shared building blocks: same-padded convs and seeded weight init."""

from __future__ import annotations

import math

import torch
from torch import nn


def conv_nd(nd: int, cin: int, cout: int, kernel: int, stride: int = 1) -> nn.Module:
    """Same-padded zero-pad convolution, 2D or 3D by `nd`."""
    cls = nn.Conv2d if nd == 2 else nn.Conv3d
    return cls(cin, cout, kernel, stride=stride, padding=kernel // 2)


def seeded_kaiming_init(module: nn.Module, seed: int, conv_scale: float = 1.0) -> None:
    """Kaiming fan-in normal init for all convolutions, reproducible by seed.

    conv_scale < 1 reproduces the smaller-initialization trick used by
    residual-dense generators.
    """
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d)):
            fan_in = (m.in_channels // m.groups) * math.prod(m.kernel_size)
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=gen).mul_(conv_scale)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm3d)):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def check_input(x: torch.Tensor, nd: int, channels: int, label: str) -> None:
    """Validate a batch against the (B, C, spatial...) contract of a network."""
    want_dims = nd + 2
    if x.dim() != want_dims:
        raise ValueError(f"{label}: expected {want_dims}D batch (B, C, ...), got shape {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ValueError(f"{label}: expected {channels} input channel(s), got {x.shape[1]}")
