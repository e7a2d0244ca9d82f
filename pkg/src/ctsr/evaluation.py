"""Quantitative evaluation: per-slice PSNR statistics and size-binned defect
detection metrics (recall / precision / F1 vs effective pore diameter)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .phantom import DefectRecord, effective_diameter_um
from .volume import SLICE_AXES, Volume

_AXIS_INDEX = {"xy": 0, "xz": 1, "yz": 2}

# full 26-neighborhood connectivity for pore components
_STRUCTURE_26 = np.ones((3, 3, 3), dtype=bool)


def _grid(a) -> np.ndarray:
    return a.data if isinstance(a, Volume) else np.asarray(a)


def psnr(a, b, data_range: float = 1.0) -> float:
    """10 log10(range^2 / MSE); +inf when the grids are identical."""
    a, b = _grid(a), _grid(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


@dataclass
class SlicePSNRStats:
    """Per-slice PSNR along one slicing plane, with mean/std over finite entries."""

    axis: str
    per_slice_db: np.ndarray
    mean_db: float
    std_db: float
    degenerate: bool = False


def slice_psnr_stats(vol, ref, axis: str, data_range: float = 1.0) -> SlicePSNRStats:
    """PSNR of every slice along `axis` ('xy' slices index z, 'xz' index y, 'yz' index x)."""
    if axis not in SLICE_AXES:
        raise ValueError(f"axis must be one of {SLICE_AXES}, got {axis!r}")
    a, b = _grid(vol), _grid(ref)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ax = _AXIS_INDEX[axis]
    per_slice = np.array([
        psnr(np.take(a, i, axis=ax), np.take(b, i, axis=ax), data_range)
        for i in range(a.shape[ax])
    ])
    finite = per_slice[np.isfinite(per_slice)]
    if finite.size == 0:
        return SlicePSNRStats(axis, per_slice, math.nan, math.nan, degenerate=True)
    return SlicePSNRStats(axis, per_slice, float(finite.mean()), float(finite.std()))


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Classic maximum between-class-variance threshold on a value sample."""
    values = np.asarray(values, dtype=np.float64).ravel()
    hist, edges = np.histogram(values, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2.0
    w = hist.astype(np.float64)
    p = w / w.sum()
    omega = np.cumsum(p)
    mu = np.cumsum(p * centers)
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    # the maximum is a plateau across an empty histogram gap; take its middle
    best = np.flatnonzero(between == between.max())
    return float(centers[best].mean())


def _resolve_threshold(vol: Volume, threshold, mask: np.ndarray) -> float:
    if isinstance(threshold, (int, float)) and not isinstance(threshold, bool):
        return float(threshold)
    if threshold == "otsu":
        return otsu_threshold(vol.data[mask])
    if threshold == "midpoint":
        meta = vol.meta
        try:
            material = float(meta["material_intensity"])
            background = float(meta["background_intensity"])
        except KeyError:
            raise ValueError("midpoint threshold needs material/background intensities in volume meta") from None
        norm = meta.get("normalization")
        if norm:
            lo, hi = float(norm["lo"]), float(norm["hi"])
            material = min(max((material - lo) / (hi - lo), 0.0), 1.0)
            background = min(max((background - lo) / (hi - lo), 0.0), 1.0)
        return (material + background) / 2.0
    raise ValueError(f"threshold must be a number, 'midpoint' or 'otsu', got {threshold!r}")


def estimate_interior_mask(vol: Volume, threshold="otsu", erode: int = 2) -> np.ndarray:
    """Part footprint for unknown data: above-threshold solid, holes filled, eroded."""
    t = _resolve_threshold(vol, threshold, np.ones(vol.shape, dtype=bool))
    solid = vol.data >= t
    filled = ndimage.binary_fill_holes(solid)
    if erode:
        filled = ndimage.binary_erosion(filled, iterations=erode)
    return filled


def segment_defects(vol: Volume, threshold="midpoint", interior_mask: np.ndarray | None = None
                    ) -> tuple[np.ndarray, list[DefectRecord]]:
    """Label sub-threshold voxels inside the mask as 26-connected pore components.

    Returns the component label map and one DefectRecord per component, with
    effective diameters computed from the volume's voxel geometry.
    """
    if interior_mask is None:
        raise ValueError("interior_mask is required (exterior background must be excluded)")
    interior_mask = np.asarray(interior_mask, dtype=bool)
    if interior_mask.shape != vol.shape:
        raise ValueError(f"mask shape {interior_mask.shape} != volume shape {vol.shape}")
    if not interior_mask.any():
        raise ValueError("interior_mask is empty")
    t = _resolve_threshold(vol, threshold, interior_mask)
    defect_mask = (vol.data < t) & interior_mask
    labels, n = ndimage.label(defect_mask, structure=_STRUCTURE_26)
    voxel_volume = float(np.prod(vol.voxel_size))
    records = []
    for comp_id in range(1, n + 1):
        voxels = np.argwhere(labels == comp_id)
        count = len(voxels)
        center = tuple(int(round(c)) for c in voxels.mean(axis=0))
        records.append(DefectRecord(
            id=comp_id - 1,
            center_vox=center,
            voxel_count=count,
            effective_diameter_um=effective_diameter_um(count, voxel_volume),
            voxel_set=[tuple(int(v) for v in vox) for vox in voxels],
        ))
    return labels, records


@dataclass
class DetectionMatch:
    """Pairing of one truth defect with one detected component (or a miss)."""

    truth_id: int | None
    detected_id: int | None
    overlap_voxels: int


@dataclass
class BinRow:
    lo_um: float
    hi_um: float
    tp: int
    fp: int
    fn: int

    @property
    def recall(self) -> float | None:
        return None if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)

    @property
    def precision(self) -> float | None:
        return None if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def f1(self) -> float | None:
        denom = 2 * self.tp + self.fp + self.fn
        return None if denom == 0 else 2 * self.tp / denom


@dataclass
class BinnedDetectionReport:
    bin_edges_um: np.ndarray
    per_bin: list[BinRow]
    totals: BinRow
    matches: list[DetectionMatch]


def match_defects(detected: list[DefectRecord], truth: list[DefectRecord]) -> list[DetectionMatch]:
    """Greedy one-to-one matching by descending voxel overlap (>= 1 voxel).

    Truth records must partition (no shared voxels); ties break on lower ids
    so the matching is deterministic.
    """
    owner: dict[tuple, int] = {}
    for t in truth:
        for vox in t.voxel_set:
            if vox in owner:
                raise ValueError(f"truth records {owner[vox]} and {t.id} overlap at voxel {vox}")
            owner[vox] = t.id
    overlaps: dict[tuple[int, int], int] = {}
    for d in detected:
        for vox in d.voxel_set:
            tid = owner.get(tuple(vox))
            if tid is not None:
                overlaps[(tid, d.id)] = overlaps.get((tid, d.id), 0) + 1
    ranked = sorted(overlaps.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    used_t, used_d = set(), set()
    matches = []
    for (tid, did), ov in ranked:
        if tid in used_t or did in used_d:
            continue
        used_t.add(tid)
        used_d.add(did)
        matches.append(DetectionMatch(tid, did, ov))
    for t in truth:
        if t.id not in used_t:
            matches.append(DetectionMatch(t.id, None, 0))
    for d in detected:
        if d.id not in used_d:
            matches.append(DetectionMatch(None, d.id, 0))
    return matches


def match_and_score(detected: list[DefectRecord], truth: list[DefectRecord],
                    bin_edges_um=None) -> BinnedDetectionReport:
    """Size-binned recall/precision/F1 from greedy one-to-one matching.

    Truth defects land in the bin of their truth diameter; false positives in
    the bin of their detected diameter. Default bins: 6 equal-width bins over
    the truth diameter range.
    """
    matches = match_defects(detected, truth)
    truth_by_id = {t.id: t for t in truth}
    det_by_id = {d.id: d for d in detected}

    if bin_edges_um is None:
        if truth:
            diam = [t.effective_diameter_um for t in truth]
            lo, hi = min(diam), max(diam)
            if hi <= lo:
                hi = lo + 1.0
            bin_edges_um = np.linspace(lo, hi, 7)
        else:
            bin_edges_um = np.linspace(0.0, 1.0, 7)
    bin_edges_um = np.asarray(bin_edges_um, dtype=np.float64)
    nbins = len(bin_edges_um) - 1

    def bin_of(diameter: float) -> int:
        idx = int(np.digitize(diameter, bin_edges_um)) - 1
        return min(max(idx, 0), nbins - 1)

    tp = np.zeros(nbins, dtype=int)
    fp = np.zeros(nbins, dtype=int)
    fn = np.zeros(nbins, dtype=int)
    for m in matches:
        if m.truth_id is not None and m.detected_id is not None:
            tp[bin_of(truth_by_id[m.truth_id].effective_diameter_um)] += 1
        elif m.truth_id is not None:
            fn[bin_of(truth_by_id[m.truth_id].effective_diameter_um)] += 1
        else:
            fp[bin_of(det_by_id[m.detected_id].effective_diameter_um)] += 1

    per_bin = [BinRow(float(bin_edges_um[i]), float(bin_edges_um[i + 1]),
                      int(tp[i]), int(fp[i]), int(fn[i])) for i in range(nbins)]
    totals = BinRow(float(bin_edges_um[0]), float(bin_edges_um[-1]),
                    int(tp.sum()), int(fp.sum()), int(fn.sum()))
    return BinnedDetectionReport(bin_edges_um, per_bin, totals, matches)


def write_detection_csv(report: BinnedDetectionReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = lambda v: "" if v is None else f"{v:.6f}"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo_um", "bin_hi_um", "tp", "fp", "fn", "recall", "precision", "f1"])
        for row in report.per_bin:
            w.writerow([f"{row.lo_um:.3f}", f"{row.hi_um:.3f}", row.tp, row.fp, row.fn,
                        fmt(row.recall), fmt(row.precision), fmt(row.f1)])
        t = report.totals
        w.writerow(["total", "", t.tp, t.fp, t.fn, fmt(t.recall), fmt(t.precision), fmt(t.f1)])
    return path


def write_psnr_csv(stats: dict[str, SlicePSNRStats], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "axis", "n_slices", "mean_db", "std_db"])
        for label, s in stats.items():
            w.writerow([label, s.axis, len(s.per_slice_db), f"{s.mean_db:.4f}", f"{s.std_db:.4f}"])
    return path


def plot_psnr_bars(stats: dict[str, SlicePSNRStats], path: str | Path) -> Path:
    """Bar chart of mean per-slice PSNR with std error bars, one bar per label."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = list(stats)
    means = [stats[k].mean_db for k in labels]
    stds = [stats[k].std_db for k in labels]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), means, yerr=stds, capsize=4, color="steelblue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_detection_curves(reports: dict[str, BinnedDetectionReport], path: str | Path) -> Path:
    """Recall / precision / F1 vs bin-center effective diameter, one curve per label."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 3, figsize=(13, 4), sharex=True)
    for label, rep in reports.items():
        centers = [(r.lo_um + r.hi_um) / 2 for r in rep.per_bin]
        for ax, metric in zip(axes, ("recall", "precision", "f1")):
            vals = [getattr(r, metric) for r in rep.per_bin]
            xs = [c for c, v in zip(centers, vals) if v is not None]
            ys = [v for v in vals if v is not None]
            ax.plot(xs, ys, marker="o", label=label)
            ax.set_title(metric)
            ax.set_xlabel("effective diameter (um)")
            ax.set_ylim(-0.05, 1.05)
    axes[0].set_ylabel("score")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
