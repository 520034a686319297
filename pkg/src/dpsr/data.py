"""HR image collections -> training pairs.

Pipeline: sliding-window 480x480 sub-images, bicubic x4 degradation of each
sub-image (crop-after-degrade), random scale-aligned 128x128 HR patch
sampling, and mini-batching. Images are float arrays in [0, 1], HWC inside
this module; batches come out channels-first.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

TILE_SIZE = 480
HR_PATCH = 128
SCALE = 4


@dataclass
class ImagePairSample:
    hr_patch: np.ndarray  # (patch, patch, 3) in [0, 1]
    lr_patch: np.ndarray  # (patch/scale, patch/scale, 3) in [0, 1]
    provenance: tuple  # (source id, y offset, x offset)


def tile_image(hr: np.ndarray, tile: int = TILE_SIZE, stride: int = TILE_SIZE,
               source_id: str = "") -> list[tuple[np.ndarray, tuple]]:
    """Sliding-window sub-images fully inside the image, with their offsets."""
    h, w = hr.shape[:2]
    if h < tile or w < tile:
        warnings.warn(f"image {source_id or '<array>'} ({h}x{w}) smaller than tile {tile}; skipped")
        return []
    tiles = []
    for y in range(0, h - tile + 1, stride):
        for x in range(0, w - tile + 1, stride):
            tiles.append((hr[y:y + tile, x:x + tile], (source_id, y, x)))
    return tiles


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    out = np.where(ax <= 1, (a + 2) * ax**3 - (a + 3) * ax**2 + 1, 0.0)
    mid = (1 < ax) & (ax < 2)
    out = np.where(mid, a * ax**3 - 5 * a * ax**2 + 8 * a * ax - 4 * a, out)
    return out


def _resample_matrix(n_in: int, scale: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix for antialiased cubic downsampling.

    The kernel is stretched by the scale factor; out-of-image taps clamp to
    the nearest edge sample.
    """
    n_out = n_in // scale
    support = 2 * scale
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        lo = int(np.floor(center)) - support + 1
        taps = np.arange(lo, lo + 2 * support)
        weights = _cubic_kernel((taps - center) / scale)
        weights /= weights.sum()
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), weights)
    return mat


def degrade_bicubic(hr: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """Bicubic downsample by an integer factor; dims must divide evenly."""
    h, w = hr.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"dims {h}x{w} not divisible by scale {scale}; pre-crop first")
    rows = _resample_matrix(h, scale)
    cols = _resample_matrix(w, scale)
    out = np.tensordot(rows, hr, axes=(1, 0))  # (h/s, w, [c])
    out = np.tensordot(cols, out, axes=(1, 1))  # (w/s, h/s, [c])
    out = np.swapaxes(out, 0, 1)
    return np.clip(out, 0.0, 1.0)


def random_patch_pair(hr_subimage: np.ndarray, patch: int = HR_PATCH, scale: int = SCALE,
                      rng: np.random.Generator | None = None,
                      lr_subimage: np.ndarray | None = None,
                      source_id: str = "") -> ImagePairSample:
    """Crop a random scale-aligned HR patch and its region of the degraded sub-image."""
    rng = rng or np.random.default_rng()
    h, w = hr_subimage.shape[:2]
    if h < patch or w < patch:
        raise ValueError(f"sub-image {h}x{w} smaller than patch {patch}")
    if lr_subimage is None:
        lr_subimage = degrade_bicubic(hr_subimage, scale)
    y = scale * int(rng.integers(0, (h - patch) // scale + 1))
    x = scale * int(rng.integers(0, (w - patch) // scale + 1))
    hr_patch = hr_subimage[y:y + patch, x:x + patch]
    lp = patch // scale
    lr_patch = lr_subimage[y // scale:y // scale + lp, x // scale:x // scale + lp]
    return ImagePairSample(hr_patch, lr_patch, (source_id, y, x))


def make_batch(samples: list[ImagePairSample], size: int = 16,
               rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples channels-first, cycling with reshuffle if too few."""
    if not samples:
        raise ValueError("empty dataset")
    rng = rng or np.random.default_rng()
    chosen = []
    while len(chosen) < size:
        order = rng.permutation(len(samples))
        chosen.extend(samples[i] for i in order)
    chosen = chosen[:size]
    hr = np.stack([np.transpose(s.hr_patch, (2, 0, 1)) for s in chosen]).astype(np.float32)
    lr = np.stack([np.transpose(s.lr_patch, (2, 0, 1)) for s in chosen]).astype(np.float32)
    return hr, lr


class PatchSampler:
    """Deterministic stream of training batches from pre-degraded tiles."""

    def __init__(self, hr_images: list[np.ndarray], patch: int = HR_PATCH, scale: int = SCALE,
                 tile: int | None = None, stride: int | None = None, seed: int = 0):
        tile = tile or max(patch, min(min(im.shape[:2]) for im in hr_images))
        stride = stride or tile
        self.patch = patch
        self.scale = scale
        self.rng = np.random.default_rng(seed)
        self.tiles: list[tuple[np.ndarray, np.ndarray, str]] = []
        for idx, im in enumerate(hr_images):
            for sub, (sid, y, x) in tile_image(im, tile=tile, stride=stride, source_id=str(idx)):
                crop = sub[: sub.shape[0] - sub.shape[0] % scale,
                           : sub.shape[1] - sub.shape[1] % scale]
                self.tiles.append((crop, degrade_bicubic(crop, scale), f"{sid}_{y}_{x}"))
        if not self.tiles:
            raise ValueError("no usable tiles in dataset")

    def next_batch(self, size: int) -> tuple[torch.Tensor, torch.Tensor]:
        samples = []
        for _ in range(size):
            i = int(self.rng.integers(0, len(self.tiles)))
            hr_tile, lr_tile, sid = self.tiles[i]
            samples.append(random_patch_pair(hr_tile, self.patch, self.scale,
                                             rng=self.rng, lr_subimage=lr_tile, source_id=sid))
        hr, lr = make_batch(samples, size, rng=self.rng)
        return torch.from_numpy(hr), torch.from_numpy(lr)


def synthetic_images(count: int, size: int = 256, seed: int = 0) -> list[np.ndarray]:
    """Smooth random RGB images for toy datasets and smoke tests."""
    torch.manual_seed(seed)
    images = []
    for _ in range(count):
        coarse = torch.rand(1, 3, max(2, size // 16), max(2, size // 16))
        im = torch.nn.functional.interpolate(coarse, size=(size, size),
                                             mode="bicubic", align_corners=False)
        images.append(im.clamp(0, 1).squeeze(0).permute(1, 2, 0).numpy().astype(np.float64))
    return images
