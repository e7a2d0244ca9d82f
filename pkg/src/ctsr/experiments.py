"""Multi-seed 2D vs 2.5D comparison experiments: one dataset, identical
training budgets, per-seed PSNR and size-binned detection metrics.

Results are written incrementally so long runs can be inspected (or resumed
by re-reading finished entries) while training is still in progress.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .evaluation import match_and_score, segment_defects, slice_psnr_stats
from .inference import TileSpec, super_resolve_volume
from .models import NetworkSpec
from .phantom import DegradationSpec, PhantomSpec, make_dataset, part_mask
from .pipeline import collect_patches, cubic_baseline, load_entry, manifest_entries, prepare_pair
from .training import TrainConfig, train_patches


def _untiled(vol_shape) -> TileSpec:
    return TileSpec(tile_yx=(vol_shape[1], vol_shape[2]), overlap_yx=(0, 0))


def evaluate_on_entry(net, spec: NetworkSpec, entry: dict, bin_edges_um=None) -> dict:
    """Mean XZ/XY PSNR and the binned detection report for one test part."""
    lr, hr, truth = load_entry(entry)
    lr_in, hr_n = prepare_pair(lr, hr, spec)
    sr = super_resolve_volume(net, spec, lr_in, _untiled(lr_in.shape))
    mask = part_mask(PhantomSpec(**entry["phantom_spec"]))
    _, detected = segment_defects(sr, "midpoint", mask)
    report = match_and_score(detected, truth, bin_edges_um)
    return {
        "psnr_xz_db": slice_psnr_stats(sr, hr_n, "xz").mean_db,
        "psnr_xy_db": slice_psnr_stats(sr, hr_n, "xy").mean_db,
        "detection": [
            {"lo_um": r.lo_um, "hi_um": r.hi_um, "tp": r.tp, "fp": r.fp, "fn": r.fn, "f1": r.f1}
            for r in report.per_bin
        ],
        "total_f1": report.totals.f1,
    }


def baseline_on_entry(entry: dict) -> dict:
    lr, hr, _ = load_entry(entry)
    base = cubic_baseline(lr, hr)
    from .volume import normalize_volume

    hr_n = normalize_volume(hr, float(hr.data.min()), float(hr.data.max()))
    return {
        "psnr_xz_db": slice_psnr_stats(base, hr_n, "xz").mean_db,
        "psnr_xy_db": slice_psnr_stats(base, hr_n, "xy").mean_db,
    }


def smallest_populated_bin_f1(detection: list[dict]) -> float | None:
    for row in detection:
        if row["tp"] + row["fn"] > 0:
            return row["f1"]
    return None


def run_dimensionality_trend(
    out_dir: str | Path,
    families: tuple[str, ...] = ("srcnn", "edsr"),
    seeds: tuple[int, ...] = (0, 1, 2),
    steps: int = 5000,
    dims: tuple[int, int, int] = (64, 256, 256),
    n_defects: int = 24,
    batch_size: int = 4,
    learning_rates: dict | float = 1e-3,
    hr_patch: int = 128,
    stride: int = 64,
    dataset_seed: int = 1234,
    bin_edges_um=None,
    progress=print,
) -> dict:
    """Train every (family, 2d/2.5d, seed) combination on one dataset and
    evaluate each on the held-out part. Returns the accumulated results dict
    (also persisted to <out_dir>/results.json after every run)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.json"

    dataset_dir = out_dir / "dataset"
    if not (dataset_dir / "manifest.json").exists():
        make_dataset(
            2, 1,
            template={"dims": dims, "n_defects": n_defects},
            degradation=DegradationSpec(blur_sigma_vox=0.6, bin_factor=4,
                                        noise_sigma=0.01, bias_amplitude=0.05),
            out_dir=dataset_dir, seed=dataset_seed)
    test_entry = manifest_entries(dataset_dir, split="test")[0]

    if results_path.exists():
        results = json.loads(results_path.read_text())
    else:
        results = {"config": {"families": list(families), "seeds": list(seeds), "steps": steps,
                              "dims": list(dims), "batch_size": batch_size},
                   "baseline": baseline_on_entry(test_entry), "runs": {}}
        results_path.write_text(json.dumps(results, indent=2) + "\n")
    progress(f"baseline: xz {results['baseline']['psnr_xz_db']:.2f} dB, "
             f"xy {results['baseline']['psnr_xy_db']:.2f} dB")

    patch_cache: dict[tuple, list] = {}
    for family in families:
        for dim in ("2d", "2.5d"):
            spec = NetworkSpec(family, dim)
            key = (family, dim)
            for seed in seeds:
                run_key = f"{family}:{dim}:{seed}"
                if run_key in results["runs"]:
                    progress(f"{run_key}: cached")
                    continue
                if key not in patch_cache:
                    patch_cache[key] = collect_patches(dataset_dir, spec, split="train",
                                                       hr_patch=hr_patch, stride=stride)
                lr_value = learning_rates if isinstance(learning_rates, float) \
                    else learning_rates.get(family, 1e-3)
                cfg = TrainConfig(batch_size=batch_size, steps=steps, learning_rate=lr_value, seed=seed)
                net, history = train_patches(spec, patch_cache[key], cfg)
                entry = dict(test_entry)
                run = evaluate_on_entry(net, spec, entry, bin_edges_um)
                run["final_loss"] = history[-1]["total"] if history else None
                results["runs"][run_key] = run
                results_path.write_text(json.dumps(results, indent=2) + "\n")
                progress(f"{run_key}: xz {run['psnr_xz_db']:.2f} dB, f1 {run['total_f1']}")
    results["summary"] = summarize_trend(results)
    results_path.write_text(json.dumps(results, indent=2) + "\n")
    return results


def summarize_trend(results: dict) -> dict:
    """Per-family seed-wise 2.5d-vs-2d comparisons and medians vs baseline."""
    cfg = results["config"]
    summary = {}
    for family in cfg["families"]:
        per_seed = []
        for seed in cfg["seeds"]:
            a = results["runs"].get(f"{family}:2.5d:{seed}")
            b = results["runs"].get(f"{family}:2d:{seed}")
            if a is None or b is None:
                continue
            f1_25 = smallest_populated_bin_f1(a["detection"])
            f1_2 = smallest_populated_bin_f1(b["detection"])
            per_seed.append({
                "seed": seed,
                "psnr_xz_25d": a["psnr_xz_db"], "psnr_xz_2d": b["psnr_xz_db"],
                "psnr_25d_gt_2d": a["psnr_xz_db"] > b["psnr_xz_db"],
                "smallest_bin_f1_25d": f1_25, "smallest_bin_f1_2d": f1_2,
                "f1_25d_ge_2d": (f1_25 is not None and f1_2 is not None and f1_25 >= f1_2),
            })
        if not per_seed:
            continue
        med25 = float(np.median([s["psnr_xz_25d"] for s in per_seed]))
        med2 = float(np.median([s["psnr_xz_2d"] for s in per_seed]))
        base = results["baseline"]["psnr_xz_db"]
        summary[family] = {
            "per_seed": per_seed,
            "median_psnr_xz_25d": med25,
            "median_psnr_xz_2d": med2,
            "baseline_psnr_xz": base,
            "seeds_25d_gt_2d": sum(s["psnr_25d_gt_2d"] for s in per_seed),
            "seeds_f1_25d_ge_2d": sum(s["f1_25d_ge_2d"] for s in per_seed),
            "n_seeds": len(per_seed),
            "both_beat_baseline_1db": med25 >= base + 1.0 and med2 >= base + 1.0,
        }
    return summary
