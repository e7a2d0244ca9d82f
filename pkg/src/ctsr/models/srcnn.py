# SRCNN - https://arxiv.org/abs/1501.00092
# Three same-padded conv layers over an input already interpolated to the
# target grid; the multi-slice variant widens the first layer's input planes.

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .common import check_input, conv_nd


class SRCNN(nn.Module):
    first_conv_name = "conv1"

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        nd = 3 if spec.dimensionality == "3d" else 2
        cin = 1 if nd == 3 else spec.in_slices
        k1, k2, k3 = spec.srcnn_kernels
        self.conv1 = conv_nd(nd, cin, spec.features, k1)
        self.conv2 = conv_nd(nd, spec.features, spec.srcnn_mid_features, k2)
        self.conv3 = conv_nd(nd, spec.srcnn_mid_features, 1, k3)
        self._nd = nd
        self._cin = cin

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_input(x, self._nd, self._cin, f"srcnn {self.spec.dimensionality}")
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        return self.conv3(x)
