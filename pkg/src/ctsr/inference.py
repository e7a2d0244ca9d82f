"""Full-volume assembly by multi-slice sliding window, with in-plane tiling,
3D sub-volume stitching, overlap blending and analytic memory estimation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import prod

import numpy as np
import torch
from torch import nn

from .models import NetworkSpec, build_network
from .volume import Volume


@dataclass
class TileSpec:
    """In-plane tiling of the network input grid.

    Overlap margins absorb boundary effects; center_crop keeps only each
    tile's core (exact for conv nets when overlap >= the receptive-field
    radius), linear_feather cross-fades the overlap bands instead.
    """

    tile_yx: tuple[int, int] = (64, 64)
    overlap_yx: tuple[int, int] = (12, 12)
    z_chunk: int = 32
    blend: str = "center_crop"

    def __post_init__(self):
        self.tile_yx = tuple(int(v) for v in self.tile_yx)
        self.overlap_yx = tuple(int(v) for v in self.overlap_yx)
        if self.blend not in ("center_crop", "linear_feather"):
            raise ValueError(f"blend must be center_crop or linear_feather, got {self.blend!r}")
        if any(o < 0 for o in self.overlap_yx):
            raise ValueError(f"overlaps must be >= 0, got {self.overlap_yx}")
        if any(t <= 2 * o for t, o in zip(self.tile_yx, self.overlap_yx)):
            raise ValueError(f"tile {self.tile_yx} must exceed twice the overlap {self.overlap_yx}")
        if self.z_chunk < 1:
            raise ValueError(f"z_chunk must be >= 1, got {self.z_chunk}")


def pad_volume_z(vol: Volume, half_window: int) -> Volume:
    """Replicate-pad half_window slices at each z end; in-plane untouched."""
    if half_window < 0:
        raise ValueError(f"half_window must be >= 0, got {half_window}")
    if half_window == 0:
        return vol.copy()
    data = np.pad(vol.data, ((half_window, half_window), (0, 0), (0, 0)), mode="edge")
    return Volume(data, vol.voxel_size, dict(vol.meta))


def _axis_tiles(extent: int, tile: int, overlap: int) -> tuple[list[int], int]:
    """Tile start positions along one axis, last tile clamped into bounds."""
    if tile > extent:
        warnings.warn(f"tile size {tile} exceeds extent {extent}; clamping")
        tile = extent
        overlap = min(overlap, max(0, (tile - 1) // 2))
    step = max(tile - 2 * overlap, 1)
    starts = []
    s = 0
    while True:
        s = min(s, extent - tile)
        starts.append(s)
        if s + tile >= extent:
            break
        s += step
    return starts, tile


def _axis_cores(starts: list[int], tile: int, overlap: int, extent: int) -> list[tuple[int, int]]:
    """Disjoint core intervals covering [0, extent), one per tile."""
    cores = []
    prev = 0
    for i, s in enumerate(starts):
        hi = extent if i == len(starts) - 1 else s + tile - overlap
        cores.append((prev, hi))
        prev = hi
    return cores


def _axis_weights(start: int, tile: int, overlap: int, extent: int, scale: int) -> np.ndarray:
    """Feather weights on the output grid: linear ramps over interior overlap bands."""
    n = tile * scale
    w = np.ones(n, dtype=np.float32)
    band = 2 * overlap * scale
    if band > 0:
        ramp = (np.arange(band, dtype=np.float32) + 1.0) / (band + 1.0)
        if start > 0:
            w[:band] = np.minimum(w[:band], ramp)
        if start + tile < extent:
            w[-band:] = np.minimum(w[-band:], ramp[::-1])
    return w


def _infer_batch(net: nn.Module, batch: np.ndarray, chunk: int = 8) -> np.ndarray:
    outs = []
    with torch.no_grad():
        for i in range(0, len(batch), chunk):
            outs.append(net(torch.from_numpy(batch[i:i + chunk])).numpy())
    return np.concatenate(outs, axis=0)


def _output_scales(spec: NetworkSpec) -> tuple[int, int]:
    """(z output scale, in-plane output scale) relative to the net input grid."""
    if spec.pre_upsampled_input:
        return 1, 1
    if spec.dimensionality == "3d":
        return spec.scale, spec.scale
    return 1, spec.scale


def super_resolve_volume(net: nn.Module, spec: NetworkSpec, lr: Volume, tiles: TileSpec) -> Volume:
    """Assemble the enhanced volume slice by slice (2d/2.5d) or chunk by chunk (3d).

    For 2d/2.5d the LR volume must already be on the HR z grid; each output
    slice comes from the input window centered on its z position, replicate
    padded at the ends. Output in-plane dims are scale x input for learned
    upsamplers and identical for pre-upsampled-input nets. Deterministic for
    fixed weights, input and TileSpec.
    """
    net.eval()
    if spec.dimensionality == "3d":
        return _super_resolve_3d(net, spec, lr, tiles)

    sz, sxy = _output_scales(spec)
    nz, ny, nx = lr.shape
    out = np.zeros((nz, ny * sxy, nx * sxy), dtype=np.float32)
    wsum = np.zeros(out.shape[1:], dtype=np.float32) if tiles.blend == "linear_feather" else None

    half = (spec.in_slices - 1) // 2
    padded = pad_volume_z(lr, half).data

    ys, tile_y = _axis_tiles(ny, tiles.tile_yx[0], tiles.overlap_yx[0])
    xs, tile_x = _axis_tiles(nx, tiles.tile_yx[1], tiles.overlap_yx[1])
    oy = tiles.overlap_yx[0] if tile_y == tiles.tile_yx[0] else min(tiles.overlap_yx[0], max(0, (tile_y - 1) // 2))
    ox = tiles.overlap_yx[1] if tile_x == tiles.tile_yx[1] else min(tiles.overlap_yx[1], max(0, (tile_x - 1) // 2))
    cores_y = _axis_cores(ys, tile_y, oy, ny)
    cores_x = _axis_cores(xs, tile_x, ox, nx)

    for iy, y0 in enumerate(ys):
        for ix, x0 in enumerate(xs):
            windows = np.stack([padded[z:z + spec.in_slices, y0:y0 + tile_y, x0:x0 + tile_x]
                                for z in range(nz)])
            pred = _infer_batch(net, windows)[:, 0]
            if not np.isfinite(pred).all():
                raise RuntimeError(f"non-finite network output in tile (y={y0}, x={x0})")
            if tiles.blend == "center_crop":
                (cy0, cy1), (cx0, cx1) = cores_y[iy], cores_x[ix]
                out[:, cy0 * sxy:cy1 * sxy, cx0 * sxy:cx1 * sxy] = \
                    pred[:, (cy0 - y0) * sxy:(cy1 - y0) * sxy, (cx0 - x0) * sxy:(cx1 - x0) * sxy]
            else:
                w = np.outer(_axis_weights(y0, tile_y, oy, ny, sxy),
                             _axis_weights(x0, tile_x, ox, nx, sxy))
                sl = np.s_[y0 * sxy:(y0 + tile_y) * sxy, x0 * sxy:(x0 + tile_x) * sxy]
                out[:, sl[0], sl[1]] += pred * w[None]
                wsum[sl] += w
    if wsum is not None:
        out /= wsum[None]

    vz, vy, vx = lr.voxel_size
    meta = dict(lr.meta)
    meta["super_resolve"] = {"family": spec.family, "dimensionality": spec.dimensionality,
                             "tile_yx": list(tiles.tile_yx), "overlap_yx": list(tiles.overlap_yx),
                             "blend": tiles.blend}
    return Volume(out, (vz, vy / sxy, vx / sxy), meta)


def _super_resolve_3d(net: nn.Module, spec: NetworkSpec, lr: Volume, tiles: TileSpec) -> Volume:
    """Chunked 3D inference with center-crop or feather blending in all axes."""
    sz, sxy = _output_scales(spec)
    nz, ny, nx = lr.shape
    out = np.zeros((nz * sz, ny * sxy, nx * sxy), dtype=np.float32)
    wsum = np.zeros(out.shape, dtype=np.float32) if tiles.blend == "linear_feather" else None

    oz = min(tiles.overlap_yx)
    zs, tile_z = _axis_tiles(nz, tiles.z_chunk, oz)
    oz = oz if tile_z == tiles.z_chunk else min(oz, max(0, (tile_z - 1) // 2))
    ys, tile_y = _axis_tiles(ny, tiles.tile_yx[0], tiles.overlap_yx[0])
    xs, tile_x = _axis_tiles(nx, tiles.tile_yx[1], tiles.overlap_yx[1])
    oy = min(tiles.overlap_yx[0], max(0, (tile_y - 1) // 2)) if tile_y != tiles.tile_yx[0] else tiles.overlap_yx[0]
    ox = min(tiles.overlap_yx[1], max(0, (tile_x - 1) // 2)) if tile_x != tiles.tile_yx[1] else tiles.overlap_yx[1]
    cores_z = _axis_cores(zs, tile_z, oz, nz)
    cores_y = _axis_cores(ys, tile_y, oy, ny)
    cores_x = _axis_cores(xs, tile_x, ox, nx)

    for iz, z0 in enumerate(zs):
        for iy, y0 in enumerate(ys):
            for ix, x0 in enumerate(xs):
                block = lr.data[z0:z0 + tile_z, y0:y0 + tile_y, x0:x0 + tile_x]
                pred = _infer_batch(net, block[None, None])[0, 0]
                if not np.isfinite(pred).all():
                    raise RuntimeError(f"non-finite network output in tile (z={z0}, y={y0}, x={x0})")
                if tiles.blend == "center_crop":
                    (cz0, cz1), (cy0, cy1), (cx0, cx1) = cores_z[iz], cores_y[iy], cores_x[ix]
                    out[cz0 * sz:cz1 * sz, cy0 * sxy:cy1 * sxy, cx0 * sxy:cx1 * sxy] = \
                        pred[(cz0 - z0) * sz:(cz1 - z0) * sz,
                             (cy0 - y0) * sxy:(cy1 - y0) * sxy,
                             (cx0 - x0) * sxy:(cx1 - x0) * sxy]
                else:
                    w = (_axis_weights(z0, tile_z, oz, nz, sz)[:, None, None]
                         * _axis_weights(y0, tile_y, oy, ny, sxy)[None, :, None]
                         * _axis_weights(x0, tile_x, ox, nx, sxy)[None, None, :])
                    sl = np.s_[z0 * sz:(z0 + tile_z) * sz, y0 * sxy:(y0 + tile_y) * sxy,
                               x0 * sxy:(x0 + tile_x) * sxy]
                    out[sl] += pred * w
                    wsum[sl] += w
    if wsum is not None:
        out /= wsum

    vz, vy, vx = lr.voxel_size
    meta = dict(lr.meta)
    meta["super_resolve"] = {"family": spec.family, "dimensionality": "3d",
                             "tile_yx": list(tiles.tile_yx), "z_chunk": tiles.z_chunk,
                             "blend": tiles.blend}
    return Volume(out, (vz / sz, vy / sxy, vx / sxy), meta)


def embed_2d_as_25d(net2d: nn.Module, in_slices: int = 7) -> nn.Module:
    """Lift a 2D network to the matching multi-slice network, exactly.

    The first layer's weights are zero on every neighbor plane and copy the
    2D weights on the center plane; all other weights are copied verbatim,
    so outputs agree with the 2D network on any window whose center slice
    matches the 2D input.
    """
    spec = getattr(net2d, "spec", None)
    if spec is None or spec.dimensionality != "2d":
        raise ValueError("embed_2d_as_25d needs a network built from a 2d NetworkSpec")
    spec25 = replace(spec, dimensionality="2.5d", in_slices=in_slices)
    net25 = build_network(spec25)
    state = dict(net2d.state_dict())
    key = net2d.first_conv_name + ".weight"
    w2d = state[key]
    w25 = torch.zeros((w2d.shape[0], in_slices) + tuple(w2d.shape[2:]), dtype=w2d.dtype)
    w25[:, in_slices // 2] = w2d[:, 0]
    state[key] = w25
    net25.load_state_dict(state)
    net25.eval()
    return net25


@dataclass
class MemoryEstimate:
    """Hardware-independent activation/parameter byte accounting.

    per_layer holds each layer's output-activation bytes in forward order;
    the peak is the running maximum over adjacent (input, output) activation
    pairs, which is the live working set of a sequential forward pass.
    """

    parameters_bytes: int
    peak_activation_bytes: int
    per_layer: list[tuple[str, int]]
    assumptions: dict = field(default_factory=dict)

    @property
    def total_activation_bytes(self) -> int:
        return sum(b for _, b in self.per_layer)

    @property
    def total_bytes(self) -> int:
        return self.parameters_bytes + self.total_activation_bytes


def _layer_plan(spec: NetworkSpec, spatial: tuple[int, ...]) -> list[tuple[str, int, tuple[int, ...]]]:
    """(name, channels, spatial shape) of every layer output in forward order."""
    f = spec.features
    plan: list[tuple[str, int, tuple[int, ...]]] = []
    up = tuple(spec.scale * s for s in spatial)
    if spec.family == "srcnn":
        plan += [("conv1", f, spatial), ("conv2", spec.srcnn_mid_features, spatial), ("conv3", 1, spatial)]
        return plan
    if spec.family == "edsr":
        if spec.dimensionality == "3d":
            plan.append(("pre_upsample", 1, up))
            spatial = up
        plan.append(("head", f, spatial))
        for i in range(spec.edsr_blocks):
            plan += [(f"body.{i}.conv1", f, spatial), (f"body.{i}.conv2", f, spatial)]
        plan.append(("body_conv", f, spatial))
        if spec.dimensionality != "3d":
            s = spec.scale
            stage = 0
            while s > 1:
                plan.append((f"upsampler.conv{stage}", 4 * f, spatial))
                spatial = tuple(2 * v for v in spatial)
                plan.append((f"upsampler.shuffle{stage}", f, spatial))
                s //= 2
                stage += 1
        plan.append(("tail", 1, spatial))
        return plan
    # esrgan generator
    g = spec.esrgan_growth
    plan.append(("conv_first", f, spatial))
    for b in range(spec.esrgan_rrdb_blocks):
        for r in range(3):
            for c in range(4):
                plan.append((f"trunk.{b}.{r}.conv{c}", g, spatial))
            plan.append((f"trunk.{b}.{r}.conv_out", f, spatial))
    plan.append(("trunk_conv", f, spatial))
    if spec.dimensionality != "3d":
        s = spec.scale
        stage = 0
        while s > 1:
            spatial = tuple(2 * v for v in spatial)
            plan += [(f"upsample{stage}", f, spatial), (f"upconv{stage}", f, spatial)]
            s //= 2
            stage += 1
    else:
        spatial = up
        plan.append(("trilinear_upsample", f, spatial))
    plan += [("hr_conv", f, spatial), ("conv_last", 1, spatial)]
    return plan


def estimate_activation_memory(spec: NetworkSpec, input_shape: tuple[int, ...], batch: int = 1,
                               element_bytes: int = 4) -> MemoryEstimate:
    """Analytic per-layer activation sizes for a forward pass at input_shape.

    input_shape follows the network contract: (in_slices, h, w) or (h, w)
    for 2d/2.5d, (d, h, w) for 3d. Parameter bytes come from the exact
    trainable count.
    """
    from .models import count_parameters

    shape = tuple(int(v) for v in input_shape)
    if spec.dimensionality == "3d":
        if len(shape) != 3:
            raise ValueError(f"3d input shape must be (d, h, w), got {shape}")
        channels, spatial = 1, shape
    else:
        if len(shape) == 3:
            if shape[0] != spec.in_slices:
                raise ValueError(f"input window depth {shape[0]} != spec in_slices {spec.in_slices}")
            channels, spatial = shape[0], shape[1:]
        elif len(shape) == 2:
            channels, spatial = spec.in_slices, shape
        else:
            raise ValueError(f"2d/2.5d input shape must be (in_slices, h, w) or (h, w), got {shape}")

    plan = _layer_plan(spec, spatial)
    per_layer = [(name, batch * ch * prod(sp) * element_bytes) for name, ch, sp in plan]
    input_bytes = batch * channels * prod(spatial) * element_bytes
    acts = [input_bytes] + [b for _, b in per_layer]
    peak = max(acts[i] + acts[i + 1] for i in range(len(acts) - 1))
    params = count_parameters(build_network(spec)).total
    return MemoryEstimate(
        parameters_bytes=params * element_bytes,
        peak_activation_bytes=peak,
        per_layer=per_layer,
        assumptions={"batch": batch, "element_bytes": element_bytes,
                     "input_shape": shape, "input_bytes": input_bytes},
    )
