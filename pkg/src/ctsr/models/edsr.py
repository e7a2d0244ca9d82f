# EDSR - https://arxiv.org/abs/1707.02921
# Residual blocks without batch normalization, global skip, sub-pixel tail.
# The 3D variant keeps the trunk with cubic kernels but upsamples the input
# by parameter-free trilinear interpolation instead of learned sub-pixel
# stages (a learned 3D upsampler would not match the published size).

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .common import check_input, conv_nd


class ResBlock(nn.Module):
    def __init__(self, nd: int, feats: int, res_scale: float):
        super().__init__()
        self.conv1 = conv_nd(nd, feats, feats, 3)
        self.conv2 = conv_nd(nd, feats, feats, 3)
        self.res_scale = res_scale

    def forward(self, x):
        res = self.conv2(F.relu(self.conv1(x)))
        return x + res * self.res_scale


class EDSR(nn.Module):
    first_conv_name = "head"

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        nd = 3 if spec.dimensionality == "3d" else 2
        cin = 1 if nd == 3 else spec.in_slices
        feats = spec.features
        self.head = conv_nd(nd, cin, feats, 3)
        self.body = nn.Sequential(*[ResBlock(nd, feats, spec.edsr_residual_scale) for _ in range(spec.edsr_blocks)])
        self.body_conv = conv_nd(nd, feats, feats, 3)
        if nd == 2:
            stages = []
            s = spec.scale
            while s > 1:
                stages += [conv_nd(2, feats, feats * 4, 3), nn.PixelShuffle(2)]
                s //= 2
            self.upsampler = nn.Sequential(*stages)
        else:
            self.upsampler = None
        self.tail = conv_nd(nd, feats, 1, 3)
        self._nd = nd
        self._cin = cin

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_input(x, self._nd, self._cin, f"edsr {self.spec.dimensionality}")
        if self._nd == 3:
            x = F.interpolate(x, scale_factor=self.spec.scale, mode="trilinear", align_corners=False)
        x = self.head(x)
        x = x + self.body_conv(self.body(x))
        if self.upsampler is not None:
            x = self.upsampler(x)
        return self.tail(x)
