"""Command-line entry points: train, eval, sweep, ablation, report, chart,
dump-features."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import synthetic_images
from .experiments import (SweepSpec, dump_feature_channels, emit_comparison_table,
                          emit_lpips_chart, run_ablation, run_sweep)
from .features import FeatureTapSpec, RESNET50, VGG19, resnet_tap, vgg_tap
from .metrics import (EvalOptions, MetricReport, evaluate_dataset, load_image,
                      load_lpips_plugin)
from .training import TrainConfig, run_training, toy_train_config

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def load_dataset(path: str) -> list[np.ndarray]:
    """Load HR images from a directory or a plain-text manifest of paths."""
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
    else:
        files = [Path(line.strip()) for line in p.read_text().splitlines() if line.strip()]
    if not files:
        raise SystemExit(f"no images found in {path}")
    return [load_image(f) for f in files]


def _dataset_arg(args) -> list[np.ndarray]:
    if args.data:
        return load_dataset(args.data)
    return synthetic_images(16, size=128, seed=0)


def _base_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.load(args.config)
    elif args.toy:
        cfg = toy_train_config()
    else:
        cfg = TrainConfig()
    return cfg


def _parse_tap(text: str) -> FeatureTapSpec:
    """Parse taps like 'phi_3_3', 'beta_1_2', 'vgg:3:3' or 'resnet:1:2'."""
    t = text.lower().replace(":", "_")
    parts = t.split("_")
    kind, a, b = parts[0], int(parts[1]), int(parts[2])
    if kind in ("phi", "vgg", VGG19):
        return vgg_tap(a, b)
    if kind in ("beta", "resnet", RESNET50):
        return resnet_tap(a, b)
    raise argparse.ArgumentTypeError(f"cannot parse tap {text!r}")


def cmd_train(args) -> int:
    cfg = _base_config(args)
    dataset = _dataset_arg(args)
    result = run_training(cfg, dataset, args.out, resume=args.resume)
    print(f"finished at iteration {result['state'].iteration}; "
          f"checkpoint: {result['checkpoint']}; loss log: {result['loss_log']}")
    return 0


def cmd_eval(args) -> int:
    plugin = None if args.no_lpips else load_lpips_plugin()
    if not args.no_lpips and plugin is None:
        print("LPIPS plugin unavailable; reporting metric as absent", file=sys.stderr)
    report = evaluate_dataset(args.sr_dir, args.hr_dir,
                              EvalOptions(lpips_plugin=plugin))
    report.write_csv(args.out)
    lp = report.mean_lpips
    print(f"{len(report.rows)} images  PSNR {report.mean_psnr:.4f} dB  "
          f"SSIM {report.mean_ssim:.4f}  LPIPS {'-' if lp is None else f'{lp:.4f}'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    dataset = _dataset_arg(args)
    eval_images = load_dataset(args.eval_data) if args.eval_data else dataset[:4]
    spec = SweepSpec(parameter=args.parameter, fixed=cfg)
    results = run_sweep(spec, dataset, eval_images, args.out)
    failures = [r["value"] for r in results if "error" in r]
    print(f"sweep finished: {len(results)} runs, {len(failures)} failed"
          + (f" ({', '.join(failures)})" if failures else ""))
    return 0


def cmd_ablation(args) -> int:
    cfg = _base_config(args)
    dataset = _dataset_arg(args)
    eval_images = load_dataset(args.eval_data) if args.eval_data else dataset[:4]
    results = run_ablation(cfg, dataset, eval_images, args.out)
    for r in results:
        status = r.get("error", "ok")
        print(f"{r['value']}: {status}")
    return 0


def cmd_report(args) -> int:
    reports = {}
    for item in args.reports:
        label, _, path = item.partition("=")
        reports[label] = MetricReport.read_csv(path or label)
    csv_path, txt_path = emit_comparison_table(reports, args.out)
    print(Path(txt_path).read_text(), end="")
    print(f"wrote {csv_path} and {txt_path}")
    return 0


def cmd_chart(args) -> int:
    reports = {}
    for item in args.reports:
        label, _, path = item.partition("=")
        reports[label] = MetricReport.read_csv(path or label)
    out = emit_lpips_chart(reports, args.out)
    print(f"wrote {out}")
    return 0


def cmd_dump_features(args) -> int:
    image = load_image(args.image)
    taps = [_parse_tap(t) for t in args.taps]
    weight_paths = {VGG19: args.vgg_weights, RESNET50: args.resnet_weights}
    paths = dump_feature_channels(image, taps, args.channels, weight_paths, args.out)
    print("\n".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_args(p):
        p.add_argument("--config", help="YAML TrainConfig file")
        p.add_argument("--toy", action="store_true", help="use the desk-scale preset")
        p.add_argument("--data", help="HR image directory or manifest file "
                                      "(default: built-in synthetic toy set)")
        p.add_argument("--out", required=True, help="output/run directory")

    p = sub.add_parser("train", help="run training")
    add_train_args(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score SR images against HR references")
    p.add_argument("--sr-dir", required=True)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--no-lpips", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hyperparameter sweep (mu or beta tap)")
    add_train_args(p)
    p.add_argument("--parameter", choices=["mu", "beta_tap"], required=True)
    p.add_argument("--eval-data", help="held-out HR images for scoring")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", help="VGG-only / static / dynamic weighting arms")
    add_train_args(p)
    p.add_argument("--eval-data")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("report", help="combine metric CSVs into a marked comparison table")
    p.add_argument("reports", nargs="+", metavar="LABEL=CSV")
    p.add_argument("--out", required=True, help="output base path (csv/txt added)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("chart", help="LPIPS comparison chart from metric CSVs")
    p.add_argument("reports", nargs="+", metavar="LABEL=CSV")
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(func=cmd_chart)

    p = sub.add_parser("dump-features", help="save per-channel feature maps as grayscale images")
    p.add_argument("--image", required=True)
    p.add_argument("--taps", nargs="+", required=True, help="e.g. phi_3_3 beta_1_2")
    p.add_argument("--channels", nargs="+", type=int, default=[0])
    p.add_argument("--vgg-weights", required=True)
    p.add_argument("--resnet-weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
