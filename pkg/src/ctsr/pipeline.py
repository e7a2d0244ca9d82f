"""Glue between datasets and networks: pair normalization, grid alignment
and patch collection. Pure composition of volume ops, no new numerics.

A network's input grid depends on its family: SRCNN consumes input already
interpolated to the HR grid (z and in-plane), EDSR/ESRGAN 2d/2.5d consume
the LR in-plane grid aligned to the HR z grid, and 3d EDSR/ESRGAN consume
the native LR grid and upsample internally.
"""

from __future__ import annotations

from pathlib import Path

from .models import NetworkSpec
from .phantom import load_defect_records, load_manifest
from .volume import PatchPair, Volume, extract_training_windows, load_volume, normalize_volume, resample_xy, resample_z


def shared_bounds(hr: Volume) -> tuple[float, float]:
    """Normalization bounds taken from the HR volume, shared by the pair."""
    return float(hr.data.min()), float(hr.data.max())


def prepare_input(lr: Volume, spec: NetworkSpec, bounds: tuple[float, float],
                  z_to_hr: float = 1.0, xy_to_hr: float = 1.0) -> Volume:
    """Normalize and re-grid an LR volume for a given network spec.

    z_to_hr / xy_to_hr are the LR -> HR grid ratios (e.g. 4.0 after 4x
    isotropic binning). 2d/2.5d nets need the HR z grid; SRCNN additionally
    needs the HR in-plane grid; 3d EDSR/ESRGAN take the native grid.
    """
    vol = normalize_volume(lr, *bounds)
    if spec.dimensionality != "3d" and z_to_hr != 1.0:
        vol = resample_z(vol, z_to_hr, "cubic")
    if spec.pre_upsampled_input:
        if spec.dimensionality == "3d" and z_to_hr != 1.0:
            vol = resample_z(vol, z_to_hr, "cubic")
        if xy_to_hr != 1.0:
            vol = resample_xy(vol, xy_to_hr, "cubic")
    return vol


def prepare_pair(lr: Volume, hr: Volume, spec: NetworkSpec) -> tuple[Volume, Volume]:
    """Normalize an LR/HR pair with shared HR bounds and align grids for spec."""
    bounds = shared_bounds(hr)
    hr_n = normalize_volume(hr, *bounds)
    z_to_hr = hr.shape[0] / lr.shape[0]
    xy_to_hr = hr.shape[1] / lr.shape[1]
    lr_n = prepare_input(lr, spec, bounds, z_to_hr=z_to_hr, xy_to_hr=xy_to_hr)
    return lr_n, hr_n


def cubic_baseline(lr: Volume, hr: Volume) -> Volume:
    """Plain cubic interpolation of the LR volume onto the HR grid."""
    bounds = shared_bounds(hr)
    vol = normalize_volume(lr, *bounds)
    if lr.shape[0] != hr.shape[0]:
        vol = resample_z(vol, hr.shape[0] / lr.shape[0], "cubic")
    if lr.shape[1] != hr.shape[1]:
        vol = resample_xy(vol, hr.shape[1] / lr.shape[1], "cubic")
    return vol


def manifest_entries(manifest: dict | str | Path, split: str | None = None) -> list[dict]:
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    entries = manifest["entries"]
    if split is not None:
        entries = [e for e in entries if e["split"] == split]
    return [dict(e, _dir=manifest["_dir"]) for e in entries]


def load_entry(entry: dict) -> tuple[Volume, Volume, list]:
    base = Path(entry["_dir"])
    lr = load_volume(base / entry["lr"])
    hr = load_volume(base / entry["hr"])
    records = load_defect_records(base / entry["defects"])
    return lr, hr, records


def collect_patches(manifest: dict | str | Path, spec: NetworkSpec, split: str = "train",
                    hr_patch: int = 128, stride: int = 64) -> list[PatchPair]:
    """Load every pair in the split, align grids and extract training windows."""
    patches: list[PatchPair] = []
    for entry in manifest_entries(manifest, split):
        lr, hr, _ = load_entry(entry)
        lr_n, hr_n = prepare_pair(lr, hr, spec)
        patches.extend(extract_training_windows(
            lr_n, hr_n, spec.dimensionality, hr_patch=hr_patch, stride=stride,
            in_slices=spec.in_slices, pre_upsampled=spec.pre_upsampled_input))
    return patches
