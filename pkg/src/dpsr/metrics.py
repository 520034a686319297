"""Evaluation protocol: Y-channel PSNR/SSIM with 4-pixel border crop, plus
pluggable LPIPS, aggregated into per-dataset reports.

Images enter as float RGB arrays (H, W, 3) in [0, 1]. The LPIPS metric is a
plugin boundary: any callable ``(rgb_a, rgb_b) -> float`` works; if no plugin
is available the metric is reported as absent, never as zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

BORDER = 4
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LpipsPlugin = Callable[[np.ndarray, np.ndarray], float]


def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB [0, 1] image, in [16/255, 235/255]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB input, got {image.shape}")
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0


def crop_border(image: np.ndarray, pixels: int = BORDER) -> np.ndarray:
    h, w = image.shape[:2]
    if h <= 2 * pixels or w <= 2 * pixels:
        raise ValueError(f"image {h}x{w} too small to crop {pixels}-pixel borders")
    return image[pixels:h - pixels, pixels:w - pixels]


def psnr(y1: np.ndarray, y2: np.ndarray) -> float:
    """10*log10(1/MSE) in dB for [0, 1] planes; identical inputs give +inf."""
    if y1.shape != y2.shape:
        raise ValueError(f"shape mismatch: {y1.shape} vs {y2.shape}")
    mse = float(np.mean((y1.astype(np.float64) - y2.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    window = torch.outer(g, g)
    return window / window.sum()


def ssim(y1: np.ndarray, y2: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), dynamic range 1."""
    if y1.shape != y2.shape:
        raise ValueError(f"shape mismatch: {y1.shape} vs {y2.shape}")
    if min(y1.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    a = torch.from_numpy(np.ascontiguousarray(y1, dtype=np.float64))[None, None]
    b = torch.from_numpy(np.ascontiguousarray(y2, dtype=np.float64))[None, None]
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)[None, None]
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    mu_a = F.conv2d(a, w)
    mu_b = F.conv2d(b, w)
    var_a = F.conv2d(a * a, w) - mu_a**2
    var_b = F.conv2d(b * b, w) - mu_b**2
    cov = F.conv2d(a * b, w) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def load_lpips_plugin() -> LpipsPlugin | None:
    """Wrap the ``lpips`` package if importable, else None (metric absent)."""
    try:
        import lpips as lpips_pkg  # type: ignore

        net = lpips_pkg.LPIPS(net="alex", verbose=False)
    except Exception:
        return None

    def plugin(rgb_a: np.ndarray, rgb_b: np.ndarray) -> float:
        def prep(im):
            t = torch.from_numpy(np.transpose(im, (2, 0, 1))).float()[None]
            return t * 2 - 1
        with torch.no_grad():
            return float(net(prep(rgb_a), prep(rgb_b)))

    return plugin


@dataclass
class EvalOptions:
    border: int = BORDER
    y_channel: bool = True
    scale: int = 4
    lpips_plugin: LpipsPlugin | None = None
    lpips_border: int = 0  # protocol default: LPIPS on uncropped RGB


@dataclass
class MetricRow:
    image: str
    psnr_db: float
    ssim: float
    lpips: float | None = None


@dataclass
class MetricReport:
    rows: list[MetricRow]
    metadata: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    @property
    def mean_lpips(self) -> float | None:
        vals = [r.lpips for r in self.rows if r.lpips is not None]
        return float(np.mean(vals)) if vals else None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "psnr_db", "ssim", "lpips"])
            for r in self.rows:
                writer.writerow([r.image, repr(r.psnr_db), repr(r.ssim),
                                 "" if r.lpips is None else repr(r.lpips)])

    @staticmethod
    def read_csv(path: str | Path) -> "MetricReport":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(MetricRow(
                    image=rec["image"],
                    psnr_db=float(rec["psnr_db"]),
                    ssim=float(rec["ssim"]),
                    lpips=float(rec["lpips"]) if rec["lpips"] else None,
                ))
        return MetricReport(rows)


def load_image(path: str | Path) -> np.ndarray:
    """8-bit image file -> float RGB array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Float [0, 1] array -> 8-bit file, rounding half away from zero."""
    arr = np.clip(image, 0.0, 1.0) * 255.0
    arr = np.floor(arr + 0.5).astype(np.uint8)
    Image.fromarray(arr).save(path)


def compare_pair(sr: np.ndarray, hr: np.ndarray, options: EvalOptions) -> tuple[float, float, float | None]:
    """(PSNR dB, SSIM, LPIPS-or-None) for one SR/HR image pair."""
    sr_c = crop_border(sr, options.border) if options.border else sr
    hr_c = crop_border(hr, options.border) if options.border else hr
    if options.y_channel:
        p1, p2 = rgb_to_y(sr_c), rgb_to_y(hr_c)
        psnr_val = psnr(p1, p2)
        ssim_val = ssim(p1, p2)
    else:
        psnr_val = psnr(sr_c, hr_c)
        ssim_val = float(np.mean([ssim(sr_c[..., c], hr_c[..., c]) for c in range(3)]))
    lp = None
    if options.lpips_plugin is not None:
        a, b = sr, hr
        if options.lpips_border:
            a = crop_border(a, options.lpips_border)
            b = crop_border(b, options.lpips_border)
        lp = float(options.lpips_plugin(a, b))
    return psnr_val, ssim_val, lp


def evaluate_dataset(sr_dir: str | Path, hr_dir: str | Path,
                     options: EvalOptions | None = None) -> MetricReport:
    """Metrics for every matching filename across the two directories."""
    options = options or EvalOptions()
    sr_dir, hr_dir = Path(sr_dir), Path(hr_dir)
    sr_names = {p.name for p in sr_dir.iterdir() if p.is_file()}
    hr_names = {p.name for p in hr_dir.iterdir() if p.is_file()}
    unmatched = sorted(sr_names ^ hr_names)
    if unmatched:
        raise ValueError(f"unmatched files across {sr_dir} and {hr_dir}: {unmatched}")
    rows = []
    for name in sorted(sr_names):
        sr = load_image(sr_dir / name)
        hr = load_image(hr_dir / name)
        p, s, lp = compare_pair(sr, hr, options)
        rows.append(MetricRow(name, p, s, lp))
    metadata = {
        "border": options.border,
        "y_channel": options.y_channel,
        "scale": options.scale,
        "lpips": options.lpips_plugin is not None,
    }
    return MetricReport(rows, metadata)
