"""Network zoo: one spec type drives construction, parameter accounting and
checkpoint IO for every family x dimensionality combination."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .common import seeded_kaiming_init
from .edsr import EDSR
from .esrgan import ESRGANDiscriminator, ESRGANGenerator
from .srcnn import SRCNN

FAMILIES = ("srcnn", "edsr", "esrgan")
DIMENSIONALITIES = ("2d", "2.5d", "3d")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture family x dimensionality x scale x channel configuration.

    The single source of truth both for building networks and for counting
    their parameters. in_slices defaults by dimensionality (1 for 2d, 7 for
    2.5d); 3d consumes one volumetric channel so in_slices is fixed at 1.
    """

    family: str
    dimensionality: str
    scale: int = 4
    in_slices: int | None = None
    features: int = 64
    srcnn_mid_features: int = 32
    srcnn_kernels: tuple[int, int, int] = (9, 5, 5)
    edsr_blocks: int = 16
    edsr_residual_scale: float = 1.0
    esrgan_rrdb_blocks: int = 23
    esrgan_growth: int = 32

    def __post_init__(self):
        object.__setattr__(self, "family", str(self.family).lower())
        object.__setattr__(self, "dimensionality", str(self.dimensionality).lower())
        object.__setattr__(self, "srcnn_kernels", tuple(self.srcnn_kernels))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.dimensionality not in DIMENSIONALITIES:
            raise ValueError(f"unknown dimensionality {self.dimensionality!r}, expected one of {DIMENSIONALITIES}")
        if self.in_slices is None:
            object.__setattr__(self, "in_slices", 7 if self.dimensionality == "2.5d" else 1)
        if self.dimensionality == "2.5d":
            if self.in_slices < 3 or self.in_slices % 2 == 0:
                raise ValueError(f"2.5d in_slices must be odd and >= 3, got {self.in_slices}")
        elif self.in_slices != 1:
            raise ValueError(f"{self.dimensionality} networks take a single input plane, got in_slices={self.in_slices}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")

    @property
    def first_kernel(self) -> int:
        return self.srcnn_kernels[0] if self.family == "srcnn" else 3

    @property
    def has_learned_upsampler(self) -> bool:
        return self.family in ("edsr", "esrgan") and self.dimensionality != "3d"

    @property
    def pre_upsampled_input(self) -> bool:
        """SRCNN consumes input already interpolated to the target grid."""
        return self.family == "srcnn"


@dataclass
class ParamReport:
    """Exact trainable-parameter accounting with per-layer breakdown.

    kernel_m/kernel_n are the first conv layer's in-plane kernel size and
    first_layer_features_k its output width; for a multi-slice network the
    first layer grows by exactly (in_slices - 1) * m * n * k over its 2D
    sibling, which is the reported delta.
    """

    per_layer: list[tuple[str, int]]
    total: int
    first_layer_delta_vs_2d: int
    kernel_m: int
    kernel_n: int
    first_layer_features_k: int


def build_network(spec: NetworkSpec, init_seed: int = 0) -> nn.Module:
    """Construct the generator network for `spec` with seeded Kaiming init.

    ESRGAN generator convolutions are additionally scaled by 0.1 (smaller
    initialization for deep residual-dense trunks).
    """
    if spec.has_learned_upsampler and not _is_power_of_two(spec.scale):
        raise ValueError(f"scale {spec.scale} must be a power of two for a learned upsampler")
    if spec.family == "srcnn":
        net = SRCNN(spec)
        seeded_kaiming_init(net, init_seed)
    elif spec.family == "edsr":
        net = EDSR(spec)
        seeded_kaiming_init(net, init_seed)
    else:
        net = ESRGANGenerator(spec)
        seeded_kaiming_init(net, init_seed, conv_scale=0.1)
    return net


def build_discriminator(spec: NetworkSpec, init_seed: int = 0) -> nn.Module:
    """Adversarial classifier paired with the ESRGAN generator.

    2d and 2.5d share the same single-slice 2D discriminator; 3d gets the
    cubic analogue.
    """
    if spec.family != "esrgan":
        raise ValueError(f"discriminators are only defined for esrgan, got {spec.family!r}")
    disc_spec = spec if spec.dimensionality == "3d" else replace(spec, dimensionality="2d", in_slices=1)
    net = ESRGANDiscriminator(disc_spec)
    seeded_kaiming_init(net, init_seed)
    return net


def _first_conv(net: nn.Module) -> nn.Module:
    mod = net
    for part in net.first_conv_name.split("."):
        mod = getattr(mod, part) if not part.isdigit() else mod[int(part)]
    return mod


def count_parameters(net: nn.Module) -> ParamReport:
    """Exact trainable totals, biases included, per leaf module."""
    per_layer = []
    for name, mod in net.named_modules():
        if next(mod.children(), None) is not None:
            continue
        n = sum(p.numel() for p in mod.parameters(recurse=False) if p.requires_grad)
        if n:
            per_layer.append((name, n))
    total = sum(n for _, n in per_layer)
    first = _first_conv(net)
    m, n_k = first.kernel_size[-2], first.kernel_size[-1]
    k = first.out_channels
    first_total = first.weight.numel() + (first.bias.numel() if first.bias is not None else 0)
    delta = first_total - (m * n_k * k + k)
    return ParamReport(
        per_layer=per_layer,
        total=total,
        first_layer_delta_vs_2d=delta,
        kernel_m=m,
        kernel_n=n_k,
        first_layer_features_k=k,
    )


def first_layer_parameter_delta(spec_2d: NetworkSpec, spec_25d: NetworkSpec) -> int:
    """(in_slices - 1) * m * n * k growth of the first layer over the 2D net."""
    if spec_2d.dimensionality != "2d" or spec_25d.dimensionality != "2.5d":
        raise ValueError("expected a 2d spec and a 2.5d spec, in that order")
    ignore = {"dimensionality", "in_slices"}
    a = {k: v for k, v in asdict(spec_2d).items() if k not in ignore}
    b = {k: v for k, v in asdict(spec_25d).items() if k not in ignore}
    if a != b:
        raise ValueError(f"specs differ beyond dimensionality/in_slices: {a} vs {b}")
    m = n = spec_2d.first_kernel
    return (spec_25d.in_slices - 1) * m * n * spec_2d.features


def save_checkpoint(net: nn.Module, path: str | Path, extra: dict | None = None) -> Path:
    """Write a single-archive checkpoint: spec.json + named weight arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec_doc = {"kind": type(net).__name__, "spec": asdict(net.spec)}
    buf = io.BytesIO()
    arrays = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("spec.json", json.dumps(spec_doc, indent=2, sort_keys=True))
        zf.writestr("weights.npz", buf.getvalue())
        if extra:
            zf.writestr("meta.json", json.dumps(extra, indent=2, sort_keys=True, default=str))
    return path


def load_checkpoint(path: str | Path, init_seed: int = 0) -> nn.Module:
    """Rebuild the network from its stored spec and load validated weights."""
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        spec_doc = json.loads(zf.read("spec.json"))
        weights = np.load(io.BytesIO(zf.read("weights.npz")))
        arrays = {k: weights[k] for k in weights.files}
    spec = NetworkSpec(**spec_doc["spec"])
    if spec_doc.get("kind") == "ESRGANDiscriminator":
        net = ESRGANDiscriminator(spec)
    else:
        net = build_network(spec, init_seed=init_seed)
    state = net.state_dict()
    if set(state) != set(arrays):
        missing = sorted(set(state) - set(arrays))
        unexpected = sorted(set(arrays) - set(state))
        raise ValueError(f"checkpoint does not match spec: missing {missing}, unexpected {unexpected}")
    for key, arr in arrays.items():
        if tuple(state[key].shape) != arr.shape:
            raise ValueError(f"shape mismatch for {key}: spec wants {tuple(state[key].shape)}, checkpoint has {arr.shape}")
    net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return net
