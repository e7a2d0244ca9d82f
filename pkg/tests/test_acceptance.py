"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7 and 8 train 12 networks for >= 5000 steps each (hours on CPU, the
bulk of a GPU-hour otherwise) and are therefore gated behind
CTSR_FULL_ACCEPTANCE=1. Their harness lives in ctsr.experiments and caches
per-run results, so an interrupted sweep resumes where it stopped; the
evaluator internals they depend on are verified unconditionally below and in
the unit suites.
"""

import math
import os
from pathlib import Path

import numpy as np
import pytest
import torch

from ctsr.evaluation import psnr, segment_defects
from ctsr.experiments import run_dimensionality_trend, smallest_populated_bin_f1
from ctsr.inference import (
    TileSpec,
    embed_2d_as_25d,
    estimate_activation_memory,
    super_resolve_volume,
)
from ctsr.models import (
    NetworkSpec,
    build_network,
    count_parameters,
    first_layer_parameter_delta,
)
from ctsr.phantom import effective_diameter_um
from ctsr.training import pixel_loss
from ctsr.volume import Volume

FULL = os.environ.get("CTSR_FULL_ACCEPTANCE") == "1"
needs_full = pytest.mark.skipif(
    not FULL, reason="multi-hour training sweep; set CTSR_FULL_ACCEPTANCE=1 to run")


def check(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number:>2} {name}: {status} {detail}".rstrip())
    assert ok, f"criterion {number} ({name}) failed {detail}"


TABLE = {
    ("srcnn", "2d"): 57_281, ("srcnn", "2.5d"): 88_385, ("srcnn", "3d"): 306_753,
    ("edsr", "2d"): 1_515_265, ("edsr", "2.5d"): 1_518_721, ("edsr", "3d"): 3_655_169,
}


def test_criterion_1_parameter_counts():
    got = {key: count_parameters(build_network(NetworkSpec(*key))).total for key in TABLE}
    check(1, "parameter-count reproduction", got == TABLE, f"{got}")


def test_criterion_2_delta_formula():
    expected = {"srcnn": 31_104, "edsr": 3_456, "esrgan": 3_456}
    ok = True
    detail = []
    for family, want in expected.items():
        formula = first_layer_parameter_delta(NetworkSpec(family, "2d"), NetworkSpec(family, "2.5d"))
        counted = (count_parameters(build_network(NetworkSpec(family, "2.5d"))).total
                   - count_parameters(build_network(NetworkSpec(family, "2d"))).total)
        ok &= formula == want == counted
        detail.append(f"{family}={formula}")
    check(2, "6mnk delta formula", ok, " ".join(detail))


def test_criterion_3_esrgan_accounting():
    r2 = count_parameters(build_network(NetworkSpec("esrgan", "2d")))
    r25 = count_parameters(build_network(NetworkSpec("esrgan", "2.5d")))
    ok = (len(r2.per_layer) > 100
          and r2.total == 16_695_681
          and r25.total - r2.total == 3_456
          and r2.total != 31_193_930)  # published total is not reproducible from this config
    from ctsr.cli import run as cli_run
    import io, contextlib

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        cli_run(["params", "--family", "esrgan", "--mode", "2d"])
    ok &= "not reproducible" in buf.getvalue()
    check(3, "esrgan generator accounting", ok,
          f"generator 2d={r2.total}, delta={r25.total - r2.total}, flagged in CLI")


def test_criterion_4_embedding_equivalence():
    rng = np.random.default_rng(0)
    lr = Volume(rng.random((20, 32, 32), dtype=np.float32), (17.28, 69.12, 69.12))
    tiles = TileSpec(tile_yx=(32, 32), overlap_yx=(0, 0))
    ok = True
    detail = []
    for family in ("srcnn", "edsr", "esrgan"):
        net2 = build_network(NetworkSpec(family, "2d"), init_seed=1).eval()
        net25 = embed_2d_as_25d(net2)
        a = super_resolve_volume(net2, net2.spec, lr, tiles)
        b = super_resolve_volume(net25, net25.spec, lr, tiles)
        diff = float(np.abs(a.data - b.data).max())
        ok &= diff <= 1e-5
        detail.append(f"{family}={diff:.2e}")
    check(4, "embedding equivalence", ok, " ".join(detail))


def test_criterion_5_tiling_consistency():
    spec = NetworkSpec("srcnn", "2d")
    net = build_network(spec, init_seed=2).eval()
    rng = np.random.default_rng(1)
    lr = Volume(rng.random((4, 96, 96), dtype=np.float32), (17.28,) * 3)
    untiled = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(96, 96), overlap_yx=(0, 0)))
    tiled = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(48, 48), overlap_yx=(9, 9)))
    diff = float(np.abs(untiled.data - tiled.data).max())
    check(5, "tiling consistency", diff <= 1e-5, f"max abs diff {diff:.2e}")


def test_criterion_6_gradient_check():
    spec = NetworkSpec("srcnn", "2d", features=4, srcnn_mid_features=3)
    net = build_network(spec, init_seed=0).double()
    n_params = sum(p.numel() for p in net.parameters())
    assert n_params <= 1000
    rng = np.random.default_rng(0)
    x = torch.tensor(rng.random((1, 1, 12, 12)), dtype=torch.float64)
    y = torch.tensor(rng.random((1, 1, 12, 12)), dtype=torch.float64)
    net.zero_grad()
    pixel_loss(net(x), y, "l2").backward()

    eps = 1e-6
    ok_count = total = 0
    with torch.no_grad():
        for p in net.parameters():
            flat, grad = p.view(-1), p.grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = float(pixel_loss(net(x), y, "l2"))
                flat[i] = orig - eps
                lo = float(pixel_loss(net(x), y, "l2"))
                flat[i] = orig
                fd = (hi - lo) / (2 * eps)
                an = grad[i].item()
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
                ok_count += rel < 1e-3
                total += 1
    frac = ok_count / total
    check(6, "gradient check", frac >= 0.95, f"{frac:.1%} of {total} parameters within 1e-3")


@pytest.fixture(scope="module")
def trend_results():
    out_dir = Path(os.environ.get("CTSR_ACCEPTANCE_DIR", "acceptance_runs")) / "trend"
    return run_dimensionality_trend(
        out_dir, families=("srcnn", "edsr"), seeds=(0, 1, 2), steps=5000,
        dims=(64, 256, 256), n_defects=24, batch_size=4, learning_rates=1e-3)


@needs_full
def test_criterion_7_psnr_trend(trend_results):
    summary = trend_results["summary"]
    ok = True
    detail = []
    for family in ("srcnn", "edsr"):
        s = summary[family]
        ok &= s["seeds_25d_gt_2d"] >= 2
        ok &= s["both_beat_baseline_1db"]
        detail.append(f"{family}: 2.5d>2d in {s['seeds_25d_gt_2d']}/{s['n_seeds']} seeds, "
                      f"medians {s['median_psnr_xz_25d']:.2f}/{s['median_psnr_xz_2d']:.2f} "
                      f"vs cubic {s['baseline_psnr_xz']:.2f} dB")
    check(7, "desk-scale PSNR trend", ok, "; ".join(detail))


@needs_full
def test_criterion_8_detection_trend(trend_results):
    summary = trend_results["summary"]
    ok = True
    detail = []
    for family in ("srcnn", "edsr"):
        s = summary[family]
        ok &= s["seeds_f1_25d_ge_2d"] >= 2
        detail.append(f"{family}: smallest-bin F1 2.5d>=2d in {s['seeds_f1_25d_ge_2d']}/{s['n_seeds']} seeds")
    check(8, "desk-scale detection trend", ok, "; ".join(detail))


def test_criterion_8_matching_oracle():
    # evaluator internals: greedy matching equals the exhaustive assignment
    # oracle on small instances with distinct overlaps (full version in
    # tests/test_evaluation.py)
    from test_evaluation import _random_instance, optimal_assignment_counts
    from ctsr.evaluation import match_and_score

    ok = True
    for seed in range(6):
        rng = np.random.default_rng(seed)
        truth, detected = _random_instance(rng, n_truth=int(rng.integers(2, 10)))
        rep = match_and_score(detected, truth, bin_edges_um=[0.0, 1000.0])
        ok &= (rep.totals.tp, rep.totals.fp, rep.totals.fn) == optimal_assignment_counts(detected, truth)
    check(8, "matching oracle agreement", ok, "6 random instances (<=10 defects)")


def test_criterion_9_memory_ordering():
    shapes = {"srcnn": ((1, 128, 128), (7, 128, 128), (128, 128, 128)),
              "edsr": ((1, 32, 32), (7, 32, 32), (32, 32, 32)),
              "esrgan": ((1, 32, 32), (7, 32, 32), (32, 32, 32))}
    ok = True
    detail = []
    for family, (s2, s25, s3) in shapes.items():
        e2 = estimate_activation_memory(NetworkSpec(family, "2d"), s2)
        e25 = estimate_activation_memory(NetworkSpec(family, "2.5d"), s25)
        e3 = estimate_activation_memory(NetworkSpec(family, "3d"), s3)
        r25 = e25.total_bytes / e2.total_bytes
        r3 = e3.total_bytes / e2.total_bytes
        ok &= abs(r25 - 1.0) < 0.05 and r3 >= 10.0
        detail.append(f"{family}: 2.5d/2d={r25:.3f}, 3d/2d={r3:.0f}x")
    check(9, "memory ordering", ok, " ".join(detail))


def test_criterion_10_evaluator_oracles():
    d1 = effective_diameter_um(1, 17.28 ** 3)
    d8 = effective_diameter_um(8, 17.28 ** 3)
    p = psnr(np.zeros((10, 10)), np.full((10, 10), 0.1), 1.0)
    ok = abs(d1 - 21.44) <= 0.01 and abs(d8 - 42.88) <= 0.01 and abs(p - 20.0) <= 1e-9
    check(10, "evaluator unit oracles", ok,
          f"d(1vox)={d1:.4f}um d(8vox)={d8:.4f}um psnr={p:.12f}dB")
