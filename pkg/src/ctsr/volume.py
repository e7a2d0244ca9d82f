"""Volume container, normalization, axis resampling and training-window extraction.

Volumes are 3D scalar grids indexed (z, y, x) with a per-axis voxel size in
micrometers. All intensities are float32; paired volumes are normalized to
[0, 1] using shared bounds taken from the high-resolution volume so that
PSNR's data range is exactly 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

MODES = ("2d", "2.5d", "3d")
SLICE_AXES = ("xy", "xz", "yz")

# map_coordinates spline order per resampling method
_METHOD_ORDER = {"nearest": 0, "linear": 1, "cubic": 3}


@dataclass
class Volume:
    """A 3D scalar field with voxel geometry.

    data: float32 array indexed (z, y, x), dimensionless intensity.
    voxel_size: per-axis physical size (z, y, x) in micrometers.
    meta: free-form provenance map (source id, degradation params, ...).
    """

    data: np.ndarray
    voxel_size: tuple[float, float, float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {self.data.shape}")
        self.voxel_size = tuple(float(v) for v in self.voxel_size)
        if len(self.voxel_size) != 3 or any(v <= 0 for v in self.voxel_size):
            raise ValueError(f"voxel_size must be 3 strictly positive values, got {self.voxel_size}")
        if not np.isfinite(self.data).all():
            idx = tuple(int(i) for i in np.argwhere(~np.isfinite(self.data))[0])
            raise ValueError(f"non-finite value at index {idx}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.voxel_size, dict(self.meta))


@dataclass
class PatchPair:
    """An aligned low-resolution input window and its high-resolution target.

    origin is the (z, y, x) voxel index of the target in the HR volume.
    """

    input_window: np.ndarray  # (d_in, h_in, w_in)
    target: np.ndarray        # (1, h_out, w_out) or (d_out, h_out, w_out) in 3d mode
    origin: tuple[int, int, int]
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def normalize_volume(vol: Volume, lo: float, hi: float) -> Volume:
    """Linearly map lo->0 and hi->1, clamp to [0, 1], keep geometry.

    The bounds are recorded under meta['normalization'] so PSNR consumers
    know the data range is 1.
    """
    lo, hi = float(lo), float(hi)
    if not hi > lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    data = np.clip((vol.data - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)
    meta = dict(vol.meta)
    meta["normalization"] = {"lo": lo, "hi": hi}
    return Volume(data, vol.voxel_size, meta)


def _resample_axis(data: np.ndarray, axis: int, factor: float, method: str) -> np.ndarray:
    """Resample one axis by `factor` using voxel-center alignment.

    Output voxel center j maps to source coordinate (j + 0.5) / factor - 0.5,
    clamped (replicated) at the ends. Linear content is preserved exactly in
    the interior.
    """
    order = _METHOD_ORDER[method]
    n_in = data.shape[axis]
    n_out = int(round(factor * n_in))
    if n_out < 1:
        raise ValueError(f"factor {factor} collapses axis {axis} (extent {n_in}) below 1")
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    moved = np.moveaxis(data, axis, 0).astype(np.float64)
    flat = moved.reshape(n_in, -1)
    out = np.empty((n_out, flat.shape[1]), dtype=np.float64)
    for col in range(flat.shape[1]):
        out[:, col] = ndimage.map_coordinates(flat[:, col], src[None, :], order=order, mode="nearest")
    out = out.reshape((n_out,) + moved.shape[1:])
    return np.moveaxis(out, 0, axis).astype(np.float32)


def resample_z(vol: Volume, factor: float, method: str = "cubic") -> Volume:
    """Resample along z only; in-plane grid and values untouched.

    Output z count is round(factor * input z count); the z voxel size is
    divided by factor. factor == 1 is a bit-exact identity for every method.
    """
    if method not in _METHOD_ORDER:
        raise ValueError(f"method must be one of {tuple(_METHOD_ORDER)}, got {method!r}")
    factor = float(factor)
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    if factor == 1.0:
        return vol.copy()
    data = _resample_axis(vol.data, 0, factor, method)
    vz, vy, vx = vol.voxel_size
    return Volume(data, (vz / factor, vy, vx), dict(vol.meta))


def resample_xy(vol: Volume, factor: float, method: str = "cubic") -> Volume:
    """Resample y and x by the same factor (isotropic in-plane); z untouched.

    Used to pre-upsample inputs for networks that consume the HR grid, and as
    the cubic-interpolation baseline.
    """
    if method not in _METHOD_ORDER:
        raise ValueError(f"method must be one of {tuple(_METHOD_ORDER)}, got {method!r}")
    factor = float(factor)
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    if factor == 1.0:
        return vol.copy()
    data = _resample_axis(vol.data, 1, factor, method)
    data = _resample_axis(data, 2, factor, method)
    vz, vy, vx = vol.voxel_size
    return Volume(data, (vz, vy / factor, vx / factor), dict(vol.meta))


def _inplane_origins(extent: int, patch: int, stride: int) -> list[int]:
    if extent < patch:
        return []
    return list(range(0, extent - patch + 1, stride))


def extract_training_windows(
    lr: Volume,
    hr: Volume,
    mode: str,
    hr_patch: int = 128,
    stride: int = 64,
    in_slices: int = 7,
    pre_upsampled: bool = False,
) -> Iterator[PatchPair]:
    """Yield every aligned (input window, HR target) pair in z, y, x order.

    Stepping is `stride` voxels in y and x on the HR grid and 1 slice in z
    (`stride` in z for 3d mode). In 2.5d mode the input window is `in_slices`
    consecutive LR slices and the target is the HR slice aligned with the
    center slice. For 2d/2.5d the LR volume must already share the HR z grid
    (resample_z first); for 3d it stays on its native z grid so input cubes
    are hr_patch/scale per side. In-plane, LR dims must divide the HR dims
    exactly, or be equal when pre_upsampled.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if in_slices < 1 or in_slices % 2 == 0:
        raise ValueError(f"in_slices must be odd and >= 1, got {in_slices}")
    nz, ny, nx = hr.shape
    lz, ly, lx = lr.shape
    if pre_upsampled:
        if (ly, lx) != (ny, nx):
            raise ValueError(f"pre-upsampled lr in-plane dims {(ly, lx)} must equal hr {(ny, nx)}")
        scale = 1
    else:
        if ny % ly or nx % lx or ny // ly != nx // lx:
            raise ValueError(f"hr in-plane dims {(ny, nx)} not an exact common multiple of lr {(ly, lx)}")
        scale = ny // ly
        if hr_patch % scale:
            raise ValueError(f"hr_patch {hr_patch} not divisible by scale {scale}")
    lr_patch = hr_patch // scale

    ys = _inplane_origins(ny, hr_patch, stride)
    xs = _inplane_origins(nx, hr_patch, stride)

    if mode == "3d":
        if lz * scale != nz:
            raise ValueError(f"3d mode needs lr z extent {lz} x scale {scale} == hr z extent {nz}")
        for z in _inplane_origins(nz, hr_patch, stride):
            if z % scale:
                continue
            for y in ys:
                for x in xs:
                    win = lr.data[z // scale : z // scale + lr_patch,
                                  y // scale : y // scale + lr_patch,
                                  x // scale : x // scale + lr_patch]
                    target = hr.data[z:z + hr_patch, y:y + hr_patch, x:x + hr_patch]
                    yield PatchPair(win, target, (z, y, x), mode)
        return

    if lz != nz:
        raise ValueError(f"z slice counts must match (resample_z first): lr {lz} vs hr {nz}")
    half = 0 if mode == "2d" else in_slices // 2
    for z in range(half, nz - half):
        for y in ys:
            for x in xs:
                ly0, lx0 = y // scale, x // scale
                win = lr.data[z - half : z + half + 1, ly0:ly0 + lr_patch, lx0:lx0 + lr_patch]
                target = hr.data[z:z + 1, y:y + hr_patch, x:x + hr_patch]
                yield PatchPair(win, target, (z, y, x), mode)


def save_volume(vol: Volume, path: str | Path) -> Path:
    """Write the two-file volume format: <stem>.raw + <stem>.json.

    The raw file is little-endian float32 in C (z, y, x) order; the sidecar
    header lists dims, voxel size, normalization bounds and provenance.
    """
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".raw", ".json") else path
    raw_path = stem.with_suffix(".raw")
    hdr_path = stem.with_suffix(".json")
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    vol.data.astype("<f4").tofile(raw_path)
    header = {
        "dims_zyx": list(vol.shape),
        "dtype": "<f4",
        "voxel_size_um": list(vol.voxel_size),
        "normalization": vol.meta.get("normalization"),
        "meta": _jsonable(vol.meta),
    }
    hdr_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return hdr_path


def load_volume(path: str | Path) -> Volume:
    """Load a volume written by save_volume (pass either the .json or .raw path)."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".raw", ".json") else path
    hdr_path = stem.with_suffix(".json")
    raw_path = stem.with_suffix(".raw")
    header = json.loads(hdr_path.read_text())
    dims = tuple(header["dims_zyx"])
    data = np.fromfile(raw_path, dtype="<f4")
    if data.size != int(np.prod(dims)):
        raise ValueError(f"raw size {data.size} does not match header dims {dims}")
    meta = dict(header.get("meta") or {})
    if header.get("normalization") is not None:
        meta.setdefault("normalization", header["normalization"])
    return Volume(data.reshape(dims), tuple(header["voxel_size_um"]), meta)


def _jsonable(obj):
    """Coerce numpy scalars/arrays in nested meta to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
