"""Synthetic paired-volume generation: solid parts with seeded pore defects,
plus the blur / bin / noise / bias degradation that produces the LR input.

The phantom stands in for a CAD-driven scan simulation at desk scale. Ground
truth is exact: every pore's rasterized voxel set is recorded so detection
metrics can be scored against it without ambiguity.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import Volume, save_volume


@dataclass
class PhantomSpec:
    """Geometry of one synthetic part on the HR grid.

    defects: list of ((z, y, x) center voxel, (rz, ry, rx) radii in voxels).
    Pores are voids: their intensity equals background_intensity.
    """

    dims: tuple[int, int, int]
    voxel_size_um: float = 17.28
    part_shape: str = "block"
    material_intensity: float = 0.8
    background_intensity: float = 0.2
    defects: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.part_shape not in ("block", "cylinder"):
            raise ValueError(f"part_shape must be block or cylinder, got {self.part_shape!r}")
        if not (0 <= self.background_intensity < self.material_intensity <= 1):
            raise ValueError("need 0 <= background_intensity < material_intensity <= 1")
        if self.voxel_size_um <= 0:
            raise ValueError("voxel_size_um must be positive")


@dataclass
class DegradationSpec:
    """Blur -> box-average binning -> additive noise -> radial bias field.

    mode 'isotropic' bins all three axes (the default 4x voxel-size ratio),
    'in_plane' bins only y and x. The bias field brightens radially toward
    the part boundary, a stand-in for beam-hardening cupping.
    """

    blur_sigma_vox: float = 0.0
    bin_factor: int = 4
    noise_sigma: float = 0.0
    bias_amplitude: float = 0.05
    mode: str = "isotropic"
    seed: int = 0

    def __post_init__(self):
        if self.bin_factor < 1:
            raise ValueError(f"bin_factor must be >= 1, got {self.bin_factor}")
        if self.mode not in ("isotropic", "in_plane"):
            raise ValueError(f"mode must be isotropic or in_plane, got {self.mode!r}")
        if self.blur_sigma_vox < 0 or self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ValueError("blur_sigma_vox, noise_sigma and bias_amplitude must be >= 0")


@dataclass
class DefectRecord:
    """Ground-truth pore metadata: exact voxel set and equivalent-sphere size."""

    id: int
    center_vox: tuple[int, int, int]
    voxel_count: int
    effective_diameter_um: float
    voxel_set: list[tuple[int, int, int]]

    def __post_init__(self):
        if self.voxel_count < 1:
            raise ValueError("voxel_count must be >= 1")


def effective_diameter_um(voxel_count: int, voxel_volume_um3: float) -> float:
    """Diameter of the sphere with the same volume: (6 V / pi)^(1/3)."""
    return (6.0 * voxel_count * voxel_volume_um3 / math.pi) ** (1.0 / 3.0)


def part_mask(spec: PhantomSpec) -> np.ndarray:
    """Solid-part footprint: a centered box or z-axis cylinder with ~10% inset."""
    nz, ny, nx = spec.dims
    inset = [max(1, d // 10) for d in spec.dims]
    mask = np.zeros(spec.dims, dtype=bool)
    if spec.part_shape == "block":
        mask[inset[0]:nz - inset[0], inset[1]:ny - inset[1], inset[2]:nx - inset[2]] = True
    else:
        cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
        radius = min(ny, nx) / 2.0 - max(inset[1], inset[2])
        yy, xx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        mask[inset[0]:nz - inset[0]] = disc
    return mask


def _ellipsoid_mask(dims, center, radii) -> np.ndarray:
    """Rasterize one ellipsoid: voxel centers with normalized radius <= 1."""
    cz, cy, cx = center
    rz, ry, rx = (max(float(r), 1e-6) for r in radii)
    z0, z1 = max(0, int(math.floor(cz - rz))), min(dims[0] - 1, int(math.ceil(cz + rz)))
    y0, y1 = max(0, int(math.floor(cy - ry))), min(dims[1] - 1, int(math.ceil(cy + ry)))
    x0, x1 = max(0, int(math.floor(cx - rx))), min(dims[2] - 1, int(math.ceil(cx + rx)))
    mask = np.zeros(dims, dtype=bool)
    if z0 > z1 or y0 > y1 or x0 > x1:
        return mask
    zz, yy, xx = np.meshgrid(np.arange(z0, z1 + 1), np.arange(y0, y1 + 1), np.arange(x0, x1 + 1), indexing="ij")
    rho = ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    mask[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] = rho <= 1.0
    return mask


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, list[DefectRecord]]:
    """Rasterize the part and its pores; soften edges by a 1-voxel ramp.

    The ramp keeps pore voxels strictly below and solid voxels strictly above
    the material/background midpoint, so threshold segmentation recovers the
    exact rasterized voxel sets. Deterministic for a fixed spec.
    """
    part = part_mask(spec)
    solid = part.copy()
    records = []
    occupied = np.zeros(spec.dims, dtype=bool)
    for i, (center, radii) in enumerate(spec.defects):
        pore = _ellipsoid_mask(spec.dims, center, radii)
        if not pore.any():
            raise ValueError(f"defect {i} at {center} rasterizes to zero voxels")
        if not (pore <= part).all():
            raise ValueError(f"defect {i} at {center} extends outside the part")
        if (pore & occupied).any():
            raise ValueError(f"defect {i} at {center} overlaps an earlier defect")
        occupied |= pore
        solid &= ~pore
        voxels = np.argwhere(pore)
        records.append(DefectRecord(
            id=i,
            center_vox=tuple(int(round(c)) for c in center),
            voxel_count=int(pore.sum()),
            effective_diameter_um=effective_diameter_um(int(pore.sum()), spec.voxel_size_um ** 3),
            voxel_set=[tuple(int(v) for v in vox) for vox in voxels],
        ))

    # signed-distance edge ramp: solid boundary voxels sit at 0.75 coverage,
    # adjacent air at 0.25, so the midpoint threshold still separates phases
    d_in = ndimage.distance_transform_edt(solid)
    d_out = ndimage.distance_transform_edt(~solid)
    coverage = np.clip(0.5 + 0.25 * (d_in - d_out), 0.0, 1.0)
    lo, hi = spec.background_intensity, spec.material_intensity
    data = (lo + (hi - lo) * coverage).astype(np.float32)

    meta = {
        "source": "phantom",
        "part_shape": spec.part_shape,
        "material_intensity": spec.material_intensity,
        "background_intensity": spec.background_intensity,
        "seed": spec.seed,
    }
    vs = float(spec.voxel_size_um)
    return Volume(data, (vs, vs, vs), meta), records


def _raster_count(radii) -> int:
    """Voxel count of an ellipsoid rasterized at an integer center."""
    dims = tuple(2 * int(math.ceil(r)) + 3 for r in radii)
    center = tuple((d - 1) / 2.0 for d in dims)
    return int(_ellipsoid_mask(dims, center, radii).sum())


def _radii_at_most(diameter: float) -> tuple[float, ...]:
    """Largest ladder shape whose effective diameter stays <= `diameter`."""
    target = (math.pi / 6.0) * diameter ** 3
    ladder = [(0.5, 0.5, 0.5), (0.5, 0.5, 1.01), (0.5, 1.01, 1.01), (1.01, 1.01, 1.01)]
    best = ladder[0]
    for radii in ladder:
        if _raster_count(radii) <= target:
            best = radii
    r = diameter / 2.0
    while _raster_count((r, r, r)) > target and r > 0.5:
        r *= 0.97
    if _raster_count((r, r, r)) <= target and _raster_count((r, r, r)) >= _raster_count(best):
        best = (r, r, r)
    return best


def _radii_at_least(diameter: float) -> tuple[float, ...]:
    """Smallest sphere whose effective diameter reaches >= `diameter`."""
    target = (math.pi / 6.0) * diameter ** 3
    r = max(diameter / 2.0, 0.5)
    while _raster_count((r, r, r)) < target:
        r *= 1.03
    return (r, r, r)


def sample_phantom_spec(
    dims: tuple[int, int, int],
    n_defects: int,
    seed: int,
    voxel_size_um: float = 17.28,
    part_shape: str = "block",
    material_intensity: float = 0.8,
    background_intensity: float = 0.2,
    diameter_range_vox: tuple[float, float] = (2.0, 14.0),
    max_tries: int = 10000,
) -> PhantomSpec:
    """Draw a non-overlapping pore population with stratified log-spaced sizes.

    The smallest and largest defects are pinned so their rasterized effective
    diameters bracket the requested range (size-binned detection curves keep
    populated extreme bins); in-between sizes are log-uniform per stratum.
    Radii are jittered anisotropically with the geometric mean preserved.
    """
    rng = np.random.default_rng(seed)
    base = PhantomSpec(dims=dims, voxel_size_um=voxel_size_um, part_shape=part_shape,
                       material_intensity=material_intensity,
                       background_intensity=background_intensity, seed=seed)
    part = part_mask(base)
    lo, hi = diameter_range_vox
    edges = np.exp(np.linspace(np.log(lo), np.log(hi), n_defects + 1))
    sizes: list[tuple[float, ...] | float] = []
    for i in range(n_defects):
        if i == 0 and n_defects > 1:
            sizes.append(_radii_at_most(lo))
        elif i == n_defects - 1:
            sizes.append(_radii_at_least(hi))
        else:
            sizes.append(float(np.exp(rng.uniform(np.log(edges[i]), np.log(edges[i + 1])))))

    placed: list[tuple[np.ndarray, float]] = []
    defects = []
    for size in sizes:
        for _ in range(max_tries):
            if isinstance(size, tuple):
                radii = np.asarray(size)
            else:
                jitter = rng.uniform(0.8, 1.25, size=3)
                jitter /= np.prod(jitter) ** (1.0 / 3.0)
                radii = np.maximum(size / 2.0 * jitter, 0.5)
            margin = radii + 2.0
            center = np.array([rng.integers(int(math.ceil(m)), dim - int(math.ceil(m)))
                               for m, dim in zip(margin, dims)], dtype=float)
            zi, yi, xi = (int(c) for c in center)
            if not part[zi, yi, xi]:
                continue
            box = _ellipsoid_mask(dims, center, radii + 1.0)
            if not (box <= part).all():
                continue
            # 2-voxel clearance keeps truth pores disjoint under 26-connectivity
            rmax = float(radii.max())
            if any(np.linalg.norm(center - c0) <= rmax + r0 + 2.0 for c0, r0 in placed):
                continue
            placed.append((center, rmax))
            defects.append((tuple(center.tolist()), tuple(radii.tolist())))
            break
        else:
            raise RuntimeError(f"could not place defect of radii {radii} after {max_tries} tries")
    return replace(base, defects=defects)


def degrade(hr: Volume, deg: DegradationSpec) -> Volume:
    """Produce the LR counterpart of an HR volume.

    Application order: Gaussian blur, box-average binning, additive Gaussian
    noise, multiplicative radial bias. Voxel size scales by bin_factor on the
    binned axes. Deterministic for a fixed seed.
    """
    b = deg.bin_factor
    axes = (0, 1, 2) if deg.mode == "isotropic" else (1, 2)
    for ax in axes:
        if hr.shape[ax] % b:
            raise ValueError(f"axis {ax} extent {hr.shape[ax]} not divisible by bin_factor {b}")

    data = hr.data.astype(np.float64)
    if deg.blur_sigma_vox > 0:
        sigma = [deg.blur_sigma_vox if ax in axes else 0.0 for ax in range(3)]
        data = ndimage.gaussian_filter(data, sigma=sigma, mode="nearest")
    if b > 1:
        nz, ny, nx = data.shape
        if deg.mode == "isotropic":
            data = data.reshape(nz // b, b, ny // b, b, nx // b, b).mean(axis=(1, 3, 5))
        else:
            data = data.reshape(nz, ny // b, b, nx // b, b).mean(axis=(2, 4))
    rng = np.random.default_rng(deg.seed)
    if deg.noise_sigma > 0:
        data = data + rng.normal(0.0, deg.noise_sigma, size=data.shape)
    if deg.bias_amplitude > 0:
        _, ny, nx = data.shape
        cy, cx = (ny - 1) / 2.0, (nx - 1) / 2.0
        yy, xx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        r2 = ((yy - cy) / max(cy, 1.0)) ** 2 + ((xx - cx) / max(cx, 1.0)) ** 2
        data = data * (1.0 + deg.bias_amplitude * (r2 / 2.0))[None, :, :]

    vz, vy, vx = hr.voxel_size
    voxel_size = (vz * b, vy * b, vx * b) if deg.mode == "isotropic" else (vz, vy * b, vx * b)
    meta = dict(hr.meta)
    meta["degradation"] = asdict(deg)
    return Volume(data.astype(np.float32), voxel_size, meta)


def save_defect_records(records: list[DefectRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = [asdict(r) for r in records]
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_defect_records(path: str | Path) -> list[DefectRecord]:
    doc = json.loads(Path(path).read_text())
    return [DefectRecord(
        id=r["id"],
        center_vox=tuple(r["center_vox"]),
        voxel_count=r["voxel_count"],
        effective_diameter_um=r["effective_diameter_um"],
        voxel_set=[tuple(v) for v in r["voxel_set"]],
    ) for r in doc]


def make_dataset(
    n_train_parts: int,
    n_test_parts: int,
    template: dict,
    degradation: DegradationSpec,
    out_dir: str | Path,
    seed: int = 0,
    overwrite: bool = False,
) -> dict:
    """Emit paired HR/LR volumes, defect records and a manifest.

    template holds sample_phantom_spec keyword arguments (dims, n_defects,
    ...). Per-part seeds derive from the manifest seed, so re-running with
    the same seed reproduces every file byte for byte.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"{manifest_path} already exists (pass overwrite to replace)")
    out_dir.mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(seed)
    part_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_train_parts + n_test_parts)]
    entries = []
    for idx, part_seed in enumerate(part_seeds):
        split = "train" if idx < n_train_parts else "test"
        name = f"part_{idx:03d}"
        spec = sample_phantom_spec(seed=part_seed, **template)
        hr, records = generate_phantom(spec)
        lr = degrade(hr, replace(degradation, seed=part_seed + 1))
        save_volume(hr, out_dir / f"{name}_hr")
        save_volume(lr, out_dir / f"{name}_lr")
        save_defect_records(records, out_dir / f"{name}_defects.json")
        entries.append({
            "name": name,
            "split": split,
            "seed": part_seed,
            "hr": f"{name}_hr.json",
            "lr": f"{name}_lr.json",
            "defects": f"{name}_defects.json",
            "phantom_spec": {k: v for k, v in asdict(spec).items() if k != "defects"},
            "n_defects": len(records),
        })

    body = {
        "seed": seed,
        "degradation": asdict(degradation),
        "template": dict(template),
        "entries": entries,
    }
    checksum = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    manifest = dict(body, checksum=checksum)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["_dir"] = str(path.parent)
    return manifest
