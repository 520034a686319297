"""Experiment drivers: hyperparameter sweeps, the three-arm ablation, the
cross-model correlation grid, report/chart emission and feature-channel dumps.

Every run writes into its own directory under a sweep root, with a
``manifest.yaml`` recording the full configuration and seed.
"""

from __future__ import annotations

import dataclasses
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data import degrade_bicubic
from .features import FeatureTapSpec, load_backbone, resnet_tap, truncate, vgg_tap
from .losses import INFINITY, LossWeights
from .metrics import EvalOptions, MetricReport, MetricRow, compare_pair, save_image
from .networks import GeneratorConfig
from .training import TrainConfig, run_training

MU_DEFAULTS = (0.2, 0.5, 1.0, 5.0, 10.0, 20.0, INFINITY)
BETA_DEFAULTS = ((1, 3), (2, 4), (3, 6), (4, 3))


@dataclass
class SweepSpec:
    parameter: str  # "mu" or "beta_tap"
    values: list = field(default_factory=list)
    fixed: TrainConfig = field(default_factory=TrainConfig)
    datasets: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.parameter not in ("mu", "beta_tap"):
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values:
            self.values = (list(MU_DEFAULTS) if self.parameter == "mu"
                           else [resnet_tap(m, n) for m, n in BETA_DEFAULTS])


def _mu_label(mu: float) -> str:
    return "mu=inf" if mu == INFINITY else f"mu={mu:g}"


def _value_label(parameter: str, value) -> str:
    if parameter == "mu":
        return _mu_label(value)
    return value.label() if isinstance(value, FeatureTapSpec) else str(value)


def _apply_value(base: TrainConfig, parameter: str, value) -> TrainConfig:
    cfg = TrainConfig.from_dict(base.to_dict())
    if parameter == "mu":
        cfg.loss_weights.mu = value
    else:
        cfg.resnet_tap = value if isinstance(value, FeatureTapSpec) else resnet_tap(*value)
    return cfg


def evaluate_generator(generator: torch.nn.Module, hr_images: list[np.ndarray],
                       scale: int = 4, options: EvalOptions | None = None,
                       sr_dir: Path | None = None) -> MetricReport:
    """Degrade each HR image, super-resolve it, and score the result."""
    options = options or EvalOptions()
    generator.eval()
    rows = []
    for idx, hr in enumerate(hr_images):
        h, w = hr.shape[:2]
        hr = hr[: h - h % scale, : w - w % scale]
        lr = degrade_bicubic(hr, scale)
        with torch.no_grad():
            inp = torch.from_numpy(np.transpose(lr, (2, 0, 1))).float()[None]
            sr = generator(inp).clamp(0, 1)[0].permute(1, 2, 0).numpy().astype(np.float64)
        name = f"img{idx:03d}.png"
        if sr_dir is not None:
            sr_dir.mkdir(parents=True, exist_ok=True)
            save_image(sr_dir / name, sr)
        p, s, lp = compare_pair(sr, hr, options)
        rows.append(MetricRow(name, p, s, lp))
    generator.train()
    return MetricReport(rows, {"border": options.border, "y_channel": options.y_channel,
                               "scale": scale, "lpips": options.lpips_plugin is not None})


def _run_one(config: TrainConfig, dataset: list[np.ndarray], eval_images: list[np.ndarray],
             run_dir: Path, options: EvalOptions | None = None) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "manifest.yaml").write_text(
        yaml.safe_dump({"config": config.to_dict(), "seed": config.seed}, sort_keys=False))
    result = run_training(config, dataset, run_dir)
    report = evaluate_generator(result["state"].generator, eval_images,
                                scale=config.scale, options=options)
    report.write_csv(run_dir / "metrics.csv")
    return {"report": report, "records": result["records"], "run_dir": run_dir}


def run_sweep(spec: SweepSpec, dataset: list[np.ndarray], eval_images: list[np.ndarray],
              out_root: str | Path, options: EvalOptions | None = None) -> list[dict]:
    """One training+evaluation run per sweep value; failures are recorded, not fatal."""
    out_root = Path(out_root)
    results = []
    for idx, value in enumerate(spec.values):
        label = _value_label(spec.parameter, value)
        cfg = _apply_value(spec.fixed, spec.parameter, value)
        cfg.seed = spec.fixed.seed + idx  # distinct, reproducible per-run seed
        run_dir = out_root / label.replace("=", "_")
        row = {"value": label, "flags": []}
        if spec.parameter == "mu" and value == INFINITY:
            row["flags"].append("vgg_only_baseline")
        try:
            outcome = _run_one(cfg, dataset, eval_images, run_dir, options)
            row.update(report=outcome["report"], records=outcome["records"],
                       run_dir=run_dir)
        except Exception as exc:
            row.update(error=f"{type(exc).__name__}: {exc}")
            (run_dir / "error.txt").parent.mkdir(parents=True, exist_ok=True)
            (run_dir / "error.txt").write_text(traceback.format_exc())
        results.append(row)
    emit_comparison_table({r["value"]: r.get("report") for r in results},
                          out_root / "sweep_table")
    return results


ABLATION_ARMS = ("vgg_only", "static_weighting", "dynamic_weighting")


def run_ablation(base: TrainConfig, dataset: list[np.ndarray], eval_images: list[np.ndarray],
                 out_root: str | Path, options: EvalOptions | None = None) -> list[dict]:
    """Three arms: VGG-only (mu=inf), static weighting (zeta=1), full dynamic."""
    out_root = Path(out_root)
    results = []
    for arm in ABLATION_ARMS:
        cfg = TrainConfig.from_dict(base.to_dict())
        if arm == "vgg_only":
            cfg.loss_weights.mu = INFINITY
        elif arm == "static_weighting":
            cfg.loss_weights.dynamic_weighting = False
        row = {"value": arm}
        try:
            outcome = _run_one(cfg, dataset, eval_images, out_root / arm, options)
            row.update(report=outcome["report"], records=outcome["records"],
                       run_dir=out_root / arm)
        except Exception as exc:
            row.update(error=f"{type(exc).__name__}: {exc}")
        results.append(row)
    emit_comparison_table({r["value"]: r.get("report") for r in results},
                          out_root / "ablation_table")
    return results


CORRELATION_CONFIGS = (
    ("mu=inf", INFINITY, None),
    ("mu=1+beta_1_3", 1.0, (1, 3)),
    ("mu=10+beta_1_3", 10.0, (1, 3)),
    ("mu=0.5+beta_3_6", 0.5, (3, 6)),
)


def run_correlation(base: TrainConfig, presets: dict[str, GeneratorConfig],
                    dataset: list[np.ndarray], eval_images: list[np.ndarray],
                    out_root: str | Path, options: EvalOptions | None = None) -> dict:
    """The four named loss configurations across generator presets, with the
    per-metric rank orders emitted for eyeball comparison (no statistical test)."""
    out_root = Path(out_root)
    table: dict[str, dict[str, MetricReport]] = {}
    for preset_name, gen_cfg in presets.items():
        table[preset_name] = {}
        for label, mu, beta in CORRELATION_CONFIGS:
            cfg = TrainConfig.from_dict(base.to_dict())
            cfg.generator = gen_cfg
            cfg.loss_weights.mu = mu
            if beta:
                cfg.resnet_tap = resnet_tap(*beta)
            run_dir = out_root / preset_name / label.replace("=", "_").replace("+", "_")
            outcome = _run_one(cfg, dataset, eval_images, run_dir, options)
            table[preset_name][label] = outcome["report"]

    ranks = {}
    for preset_name, reports in table.items():
        labels = list(reports)
        for metric, higher_better in (("mean_psnr", True), ("mean_ssim", True),
                                      ("mean_lpips", False)):
            vals = [getattr(reports[l], metric) for l in labels]
            if any(v is None for v in vals):
                continue
            order = sorted(labels, key=lambda l: getattr(reports[l], metric),
                           reverse=higher_better)
            ranks[f"{preset_name}/{metric}"] = order
    (out_root / "rank_orders.yaml").write_text(yaml.safe_dump(ranks, sort_keys=True))
    return {"reports": table, "ranks": ranks}


def _summary_columns(report: MetricReport | None) -> dict[str, float | None]:
    if report is None:
        return {"psnr": None, "ssim": None, "lpips": None}
    return {"psnr": report.mean_psnr, "ssim": report.mean_ssim, "lpips": report.mean_lpips}


METRIC_DIRECTIONS = {"psnr": True, "ssim": True, "lpips": False}  # True = higher better


def emit_comparison_table(reports: dict[str, MetricReport | None],
                          out_base: str | Path) -> tuple[Path, Path]:
    """CSV plus aligned text table with best (**) / second-best (*) markers.

    Ties share the best marker. Direction is per metric: PSNR/SSIM higher is
    better, LPIPS lower is better.
    """
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    rows = {label: _summary_columns(rep) for label, rep in reports.items()}

    marks: dict[str, dict[str, str]] = {label: {} for label in rows}
    for metric, higher in METRIC_DIRECTIONS.items():
        vals = {l: v[metric] for l, v in rows.items() if v[metric] is not None}
        if len(vals) < 2:
            continue
        distinct = sorted(set(vals.values()), reverse=higher)
        best = distinct[0]
        second = distinct[1] if len(distinct) > 1 else None
        for label, v in vals.items():
            if v == best:
                marks[label][metric] = "**"
            elif second is not None and v == second:
                marks[label][metric] = "*"

    csv_path = out_base.with_suffix(".csv")
    with open(csv_path, "w") as fh:
        fh.write("label,psnr,ssim,lpips\n")
        for label, cols in rows.items():
            fh.write(",".join([label] + ["" if cols[m] is None else repr(cols[m])
                                         for m in ("psnr", "ssim", "lpips")]) + "\n")

    txt_path = out_base.with_suffix(".txt")
    headers = ["label", "psnr", "ssim", "lpips"]
    lines = [headers]
    for label, cols in rows.items():
        line = [label]
        for m in ("psnr", "ssim", "lpips"):
            v = cols[m]
            cell = "-" if v is None else f"{v:.4f}{marks[label].get(m, '')}"
            line.append(cell)
        lines.append(line)
    widths = [max(len(row[i]) for row in lines) for i in range(len(headers))]
    with open(txt_path, "w") as fh:
        for row in lines:
            fh.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n")
    return csv_path, txt_path


def emit_lpips_chart(reports: dict[str, MetricReport], out_path: str | Path) -> Path:
    """Per-method LPIPS point/line chart; deterministic for fixed inputs."""
    out_path = Path(out_path)
    labels = [l for l, rep in reports.items() if rep.mean_lpips is not None]
    if not labels:
        raise ValueError("no reports contain LPIPS values")
    values = [reports[l].mean_lpips for l in labels]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(labels)), values, marker="o")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("LPIPS (lower is better)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def dump_feature_channels(image: np.ndarray, taps: list[FeatureTapSpec],
                          channels: list[int], weight_paths: dict[str, str | Path],
                          out_dir: str | Path) -> list[Path]:
    """Min-max normalized grayscale dumps of selected feature channels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    backbones = {}
    paths = []
    inp = torch.from_numpy(np.transpose(image, (2, 0, 1))).float()[None]
    for tap in taps:
        if tap.backbone not in backbones:
            backbones[tap.backbone] = load_backbone(tap.backbone, weight_paths[tap.backbone])
        extractor = truncate(backbones[tap.backbone], tap)
        with torch.no_grad():
            fmap = extractor(inp)[0]
        for ch in channels:
            if not 0 <= ch < fmap.shape[0]:
                raise ValueError(f"channel {ch} out of range for {tap.label()} "
                                 f"({fmap.shape[0]} channels)")
            plane = fmap[ch].numpy().astype(np.float64)
            span = plane.max() - plane.min()
            norm = (plane - plane.min()) / span if span > 0 else np.zeros_like(plane)
            arr = np.floor(norm * 255.0 + 0.5).astype(np.uint8)
            path = out_dir / f"{tap.label()}_ch{ch:03d}.png"
            from PIL import Image
            Image.fromarray(arr, mode="L").save(path)
            paths.append(path)
    return paths
