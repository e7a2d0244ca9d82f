"""Command-line entry point: thin adapters wiring the library into
reproducible experiments. No numerical logic lives here."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .evaluation import (
    match_and_score,
    plot_detection_curves,
    plot_psnr_bars,
    segment_defects,
    slice_psnr_stats,
    write_detection_csv,
    write_psnr_csv,
)
from .models import (
    NetworkSpec,
    build_network,
    count_parameters,
    first_layer_parameter_delta,
    load_checkpoint,
)
from .phantom import PhantomSpec, DegradationSpec, generate_phantom, make_dataset, part_mask, sample_phantom_spec, save_defect_records
from .pipeline import cubic_baseline, load_entry, manifest_entries, prepare_pair
from .inference import super_resolve_volume
from .training import train
from .volume import load_volume, save_volume

OUTPUT_ROOT_ENV = "CTSR_OUTPUT_ROOT"


def _out_dir(args, cfg: ExperimentConfig | None, sub: str) -> Path:
    import os

    if getattr(args, "out", None):
        return Path(args.out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    base = Path(cfg.output_dir) if cfg is not None else Path("runs")
    return root / base / sub


def _write_run_record(out_dir: Path, args, cfg: ExperimentConfig | None) -> None:
    import numpy
    import torch

    record = {
        "argv": list(sys.argv[1:]),
        "config_hash": config_hash(args.config) if getattr(args, "config", None) else None,
        "master_seed": cfg.seed if cfg is not None else None,
        "versions": {"ctsr": __version__, "numpy": numpy.__version__, "torch": torch.__version__},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_record.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _cmd_params(args) -> int:
    spec = NetworkSpec(args.family, args.mode, scale=args.scale,
                       in_slices=args.in_slices if args.mode == "2.5d" else None)
    report = count_parameters(build_network(spec))
    print(f"family {spec.family}  mode {spec.dimensionality}  scale {spec.scale}  in_slices {spec.in_slices}")
    for name, count in report.per_layer:
        print(f"  {name:40s} {count:>12d}")
    print(f"total {report.total}")
    print(f"first layer kernel {report.kernel_m}x{report.kernel_n}, features {report.first_layer_features_k}")
    if spec.dimensionality == "2.5d":
        delta = first_layer_parameter_delta(replace(spec, dimensionality="2d", in_slices=1), spec)
        print(f"delta {delta}  # (in_slices-1)*m*n*k growth over the 2d network")
    if spec.family == "esrgan":
        print("note: generator-only count; published ESRGAN totals include "
              "unstated extra parameters and are not reproducible from this config")
    return 0


def _cmd_phantom(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = _out_dir(args, cfg, "phantom")
    spec = sample_phantom_spec(seed=cfg.sub_seed("phantom"), **asdict(cfg.phantom))
    hr, records = generate_phantom(spec)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(hr, out / "phantom_hr")
    save_defect_records(records, out / "phantom_defects.json")
    _write_run_record(out, args, cfg)
    print(f"wrote phantom {hr.shape} with {len(records)} defects to {out}")
    return 0


def _cmd_degrade(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    from .phantom import degrade

    vol = load_volume(args.input)
    lr = degrade(vol, cfg.degradation)
    out = save_volume(lr, args.out)
    _write_run_record(out.parent, args, cfg)
    print(f"wrote degraded volume {lr.shape} to {args.out}")
    return 0


def _cmd_dataset(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = _out_dir(args, cfg, "dataset")
    manifest = make_dataset(
        cfg.dataset.n_train_parts, cfg.dataset.n_test_parts,
        template=asdict(cfg.phantom), degradation=cfg.degradation,
        out_dir=out, seed=cfg.sub_seed("dataset"), overwrite=args.overwrite)
    _write_run_record(out, args, cfg)
    print(f"wrote {len(manifest['entries'])} part pairs to {out} (checksum {manifest['checksum'][:12]})")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    manifest_dir = Path(args.dataset) if args.dataset else _out_dir(args, cfg, "dataset")
    out = _out_dir(args, cfg, f"train_{cfg.network.family}_{cfg.network.dimensionality}")
    ckpt, history = train(cfg.network, manifest_dir, cfg.training, out,
                          hr_patch=cfg.dataset.hr_patch, stride=cfg.dataset.stride)
    _write_run_record(out, args, cfg)
    final = history[-1] if history else {}
    print(f"trained {cfg.network.family} {cfg.network.dimensionality} for {len(history)} steps; "
          f"final loss {final.get('total')}; checkpoint {ckpt}")
    return 0


def _cmd_infer(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    net = load_checkpoint(args.checkpoint)
    lr = load_volume(args.input)
    from .pipeline import prepare_input

    bounds = lr.meta.get("normalization")
    if bounds:
        vol = prepare_input(lr, net.spec, (bounds["lo"], bounds["hi"]),
                            z_to_hr=args.z_factor, xy_to_hr=args.xy_factor)
    else:
        vol = prepare_input(lr, net.spec, (float(lr.data.min()), float(lr.data.max())),
                            z_to_hr=args.z_factor, xy_to_hr=args.xy_factor)
    sr = super_resolve_volume(net, net.spec, vol, cfg.tiles)
    sr.meta["checkpoint"] = str(args.checkpoint)
    out = save_volume(sr, args.out)
    _write_run_record(out.parent, args, cfg)
    print(f"wrote super-resolved volume {sr.shape} to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    net = load_checkpoint(args.checkpoint)
    spec = net.spec
    manifest_dir = Path(args.dataset) if args.dataset else _out_dir(args, cfg, "dataset")
    label = args.label or f"{spec.family}_{spec.dimensionality}"
    out = _out_dir(args, cfg, f"eval_{label}")
    out.mkdir(parents=True, exist_ok=True)

    psnr_stats = {}
    det_reports = {}
    summary = {"label": label, "parts": []}
    for entry in manifest_entries(manifest_dir, split="test"):
        lr, hr, truth = load_entry(entry)
        lr_in, hr_n = prepare_pair(lr, hr, spec)
        sr = super_resolve_volume(net, spec, lr_in, cfg.tiles)
        baseline = cubic_baseline(lr, hr)
        mask = part_mask(PhantomSpec(**entry["phantom_spec"]))

        part_summary = {"name": entry["name"], "psnr": {}, "baseline_psnr": {}}
        for axis in cfg.evaluation.axes:
            s = slice_psnr_stats(sr, hr_n, axis)
            b = slice_psnr_stats(baseline, hr_n, axis)
            psnr_stats[f"{entry['name']}:{label}:{axis}"] = s
            psnr_stats[f"{entry['name']}:cubic:{axis}"] = b
            part_summary["psnr"][axis] = {"mean_db": s.mean_db, "std_db": s.std_db}
            part_summary["baseline_psnr"][axis] = {"mean_db": b.mean_db, "std_db": b.std_db}

        _, detected = segment_defects(sr, cfg.evaluation.threshold, mask)
        report = match_and_score(detected, truth, cfg.evaluation.bin_edges_um)
        det_reports[f"{entry['name']}:{label}"] = report
        write_detection_csv(report, out / f"detection_{entry['name']}.csv")
        part_summary["detection"] = {
            "tp": report.totals.tp, "fp": report.totals.fp, "fn": report.totals.fn,
            "f1": report.totals.f1,
            "per_bin": [{"lo_um": r.lo_um, "hi_um": r.hi_um, "tp": r.tp, "fp": r.fp,
                         "fn": r.fn, "recall": r.recall, "precision": r.precision,
                         "f1": r.f1} for r in report.per_bin],
        }
        summary["parts"].append(part_summary)

    write_psnr_csv(psnr_stats, out / "psnr.csv")
    plot_psnr_bars(psnr_stats, out / "psnr.png")
    plot_detection_curves(det_reports, out / "detection.png")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_run_record(out, args, cfg)
    for part in summary["parts"]:
        for axis, s in part["psnr"].items():
            print(f"{part['name']} {label} {axis}: {s['mean_db']:.2f} dB "
                  f"(cubic {part['baseline_psnr'][axis]['mean_db']:.2f} dB)")
        print(f"{part['name']} {label} detection f1 {part['detection']['f1']}")
    return 0


def _cmd_report(args) -> int:
    rows = []
    for run_dir in args.runs:
        summary_path = Path(run_dir) / "summary.json"
        if not summary_path.exists():
            raise FileNotFoundError(f"no summary.json in {run_dir} (run `ctsr eval` first)")
        summary = json.loads(summary_path.read_text())
        for part in summary["parts"]:
            row = {"label": summary["label"], "part": part["name"]}
            for axis, s in part["psnr"].items():
                row[f"psnr_{axis}_db"] = round(s["mean_db"], 3)
            row["detection_f1"] = part["detection"]["f1"]
            rows.append(row)
    if not rows:
        print("nothing to report")
        return 0
    cols = sorted({k for row in rows for k in row}, key=lambda c: (c != "label", c != "part", c))
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for row in rows:
        print("  ".join(str(row.get(c, "")).ljust(widths[c]) for c in cols))
    if args.out:
        import csv as _csv

        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = _csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctsr", description="volumetric super-resolution experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment YAML")
        sp.add_argument("--out", help="output directory/file (default: from config)")
        sp.add_argument("--seed", type=int, help="override the master seed")

    sp = sub.add_parser("params", help="print parameter counts and the first-layer delta")
    sp.add_argument("--family", required=True, choices=("srcnn", "edsr", "esrgan"))
    sp.add_argument("--mode", required=True, choices=("2d", "2.5d", "3d"))
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--in-slices", type=int, default=7, dest="in_slices")
    sp.set_defaults(func=_cmd_params)

    sp = sub.add_parser("phantom", help="generate one synthetic part (HR volume + defect records)")
    add_common(sp)
    sp.set_defaults(func=_cmd_phantom)

    sp = sub.add_parser("degrade", help="degrade an HR volume to its LR counterpart")
    add_common(sp)
    sp.add_argument("--input", required=True)
    sp.set_defaults(func=_cmd_degrade)

    sp = sub.add_parser("dataset", help="generate the paired train/test dataset")
    add_common(sp)
    sp.add_argument("--overwrite", action="store_true")
    sp.set_defaults(func=_cmd_dataset)

    sp = sub.add_parser("train", help="train the configured network on the dataset")
    add_common(sp)
    sp.add_argument("--dataset", help="dataset directory (default: <output_dir>/dataset)")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("infer", help="super-resolve a volume file with a checkpoint")
    add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--z-factor", type=float, default=1.0, dest="z_factor",
                    help="LR->HR z grid ratio of the input volume")
    sp.add_argument("--xy-factor", type=float, default=1.0, dest="xy_factor",
                    help="LR->HR in-plane ratio (pre-upsampled-input nets only)")
    sp.set_defaults(func=_cmd_infer)

    sp = sub.add_parser("eval", help="PSNR and defect-detection metrics on the test split")
    add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", help="dataset directory (default: <output_dir>/dataset)")
    sp.add_argument("--label", help="label for this run in reports")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("report", help="collate eval summaries into a comparison table")
    sp.add_argument("runs", nargs="+", help="eval output directories")
    sp.add_argument("--out", help="write the table as CSV")
    sp.set_defaults(func=_cmd_report)

    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2 by contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
