# ESRGAN - https://arxiv.org/abs/1809.00219
# RRDB generator (residual-in-residual dense blocks, no batch norm, 0.2
# residual scaling) and a staged-downsampling discriminator. The 3D generator
# swaps learned nearest+conv upsample stages for parameter-free trilinear
# interpolation, mirroring the EDSR 3D choice.

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .common import check_input, conv_nd

RESIDUAL_SCALE = 0.2


class DenseBlock(nn.Module):
    """5-conv dense block with growth channels, residually scaled."""

    def __init__(self, nd: int, feats: int, growth: int):
        super().__init__()
        self.convs = nn.ModuleList(
            conv_nd(nd, feats + i * growth, growth, 3) for i in range(4)
        )
        self.conv_out = conv_nd(nd, feats + 4 * growth, feats, 3)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(F.leaky_relu(conv(torch.cat(feats, dim=1)), 0.2))
        out = self.conv_out(torch.cat(feats, dim=1))
        return x + RESIDUAL_SCALE * out


class RRDB(nn.Module):
    def __init__(self, nd: int, feats: int, growth: int):
        super().__init__()
        self.blocks = nn.Sequential(*[DenseBlock(nd, feats, growth) for _ in range(3)])

    def forward(self, x):
        return x + RESIDUAL_SCALE * self.blocks(x)


class ESRGANGenerator(nn.Module):
    first_conv_name = "conv_first"

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        nd = 3 if spec.dimensionality == "3d" else 2
        cin = 1 if nd == 3 else spec.in_slices
        feats, growth = spec.features, spec.esrgan_growth
        self.conv_first = conv_nd(nd, cin, feats, 3)
        self.trunk = nn.Sequential(*[RRDB(nd, feats, growth) for _ in range(spec.esrgan_rrdb_blocks)])
        self.trunk_conv = conv_nd(nd, feats, feats, 3)
        if nd == 2:
            self.upconvs = nn.ModuleList()
            s = spec.scale
            while s > 1:
                self.upconvs.append(conv_nd(2, feats, feats, 3))
                s //= 2
        else:
            self.upconvs = None
        self.hr_conv = conv_nd(nd, feats, feats, 3)
        self.conv_last = conv_nd(nd, feats, 1, 3)
        self._nd = nd
        self._cin = cin

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_input(x, self._nd, self._cin, f"esrgan {self.spec.dimensionality}")
        fea = self.conv_first(x)
        fea = fea + self.trunk_conv(self.trunk(fea))
        if self._nd == 2:
            for conv in self.upconvs:
                fea = F.interpolate(fea, scale_factor=2, mode="nearest")
                fea = F.leaky_relu(conv(fea), 0.2)
        else:
            fea = F.interpolate(fea, scale_factor=self.spec.scale, mode="trilinear", align_corners=False)
        return self.conv_last(F.leaky_relu(self.hr_conv(fea), 0.2))


class ESRGANDiscriminator(nn.Module):
    """Staged-downsampling logit classifier over single slices.

    An adaptive-pooled 1x1 head keeps it usable on any patch size; the 3D
    analogue replaces every conv with its cubic counterpart.
    """

    first_conv_name = "stages.0"

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        nd = 3 if spec.dimensionality == "3d" else 2
        bn = nn.BatchNorm2d if nd == 2 else nn.BatchNorm3d
        widths = [(64, 64), (64, 128), (128, 256), (256, 512)]
        layers: list[nn.Module] = [conv_nd(nd, 1, 64, 3), nn.LeakyReLU(0.2)]
        for cin, cout in widths:
            layers += [conv_nd(nd, cin, cout, 3, stride=2), bn(cout), nn.LeakyReLU(0.2)]
            if cin != cout:
                layers += [conv_nd(nd, cout, cout, 3), bn(cout), nn.LeakyReLU(0.2)]
        self.stages = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1) if nd == 2 else nn.AdaptiveAvgPool3d(1)
        self.head = nn.Sequential(
            conv_nd(nd, 512, 128, 1), nn.LeakyReLU(0.2), conv_nd(nd, 128, 1, 1)
        )
        self._nd = nd

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_input(x, self._nd, 1, f"esrgan discriminator {self.spec.dimensionality}")
        out = self.head(self.pool(self.stages(x)))
        return out.flatten(1).squeeze(1)
