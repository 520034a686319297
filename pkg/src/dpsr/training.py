"""Alternating GAN optimization: Adam for G and D, halving LR schedule,
seeded replay, checkpointing, and per-step loss logging."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from . import losses
from .data import PatchSampler
from .features import (FeatureExtractor, FeatureMap, FeatureTapSpec, extract,
                       load_backbone, resnet_tap, save_random_weights,
                       truncate, vgg_tap, RESNET50, VGG19)
from .losses import LossWeights
from .networks import (GeneratorConfig, build_discriminator, build_generator,
                       toy_generator_config)

LOG_COLUMNS = ("iteration", "l_vgg", "l_res", "zeta", "weighted_res_term",
               "l_dp", "content", "adversarial", "total")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    total_iterations: int = 400_000
    # 1e-4 is the stable default; higher rates are selectable via config
    base_lr: float = 1e-4
    lr_halve_milestones: list[int] = field(default_factory=lambda: [50_000, 100_000, 200_000, 300_000])
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    batch_size: int = 16
    hr_patch: int = 128
    scale: int = 4
    loss_weights: LossWeights = field(default_factory=LossWeights)
    vgg_tap: FeatureTapSpec = field(default_factory=lambda: vgg_tap(5, 4))
    resnet_tap: FeatureTapSpec = field(default_factory=lambda: resnet_tap(3, 6))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc_base_width: int = 64
    seed: int = 0
    checkpoint_interval: int = 5000
    vgg_weights: str | None = None
    resnet_weights: str | None = None

    def __post_init__(self):
        ms = self.lr_halve_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing: {ms}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_weights"]["mu"] = "inf" if self.loss_weights.mu == math.inf else self.loss_weights.mu
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        lw = dict(d.pop("loss_weights", {}))
        if str(lw.get("mu", "")).lower() in ("inf", "infinity", ".inf"):
            lw["mu"] = math.inf
        gen = d.pop("generator", {})
        taps = {}
        for key in ("vgg_tap", "resnet_tap"):
            if key in d:
                taps[key] = FeatureTapSpec(**d.pop(key))
        return TrainConfig(loss_weights=LossWeights(**lw),
                           generator=GeneratorConfig(**gen), **taps, **d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @staticmethod
    def load(path: str | Path) -> "TrainConfig":
        return TrainConfig.from_dict(yaml.safe_load(Path(path).read_text()))


def toy_train_config(**overrides) -> TrainConfig:
    """Desk-scale preset: 4-RRDB generator, small patches, 500 iterations."""
    base = dict(
        total_iterations=500,
        batch_size=2,
        hr_patch=64,
        lr_halve_milestones=[200, 350],
        generator=toy_generator_config(),
        disc_base_width=32,
        checkpoint_interval=500,
        # at this scale the discriminator overpowers a freshly initialized
        # generator within a few hundred steps; a softer adversarial weight
        # keeps the total objective dominated by the perceptual terms
        loss_weights=LossWeights(eta_adversarial=1e-3),
    )
    base.update(overrides)
    return TrainConfig(**base)


def schedule_lr(iteration: int, config: TrainConfig) -> float:
    halvings = sum(1 for m in config.lr_halve_milestones if m <= iteration)
    return config.base_lr * 0.5**halvings


@dataclass
class TrainState:
    config: TrainConfig
    generator: torch.nn.Module
    discriminator: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    vgg_extractor: FeatureExtractor
    resnet_extractor: FeatureExtractor
    sampler: PatchSampler
    iteration: int = 0


def _ensure_weights(config: TrainConfig, out_dir: Path) -> tuple[Path, Path]:
    """Resolve backbone weight paths, generating random stand-ins if unset."""
    paths = []
    for arch, configured in ((VGG19, config.vgg_weights), (RESNET50, config.resnet_weights)):
        if configured:
            paths.append(Path(configured))
        else:
            p = out_dir / f"{arch}_random.pt"
            if not p.exists():
                save_random_weights(arch, p, seed=config.seed)
            paths.append(p)
    return tuple(paths)


def init_state(config: TrainConfig, dataset: list[np.ndarray], out_dir: str | Path) -> TrainState:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vgg_path, resnet_path = _ensure_weights(config, out_dir)
    vgg_bb = load_backbone(VGG19, vgg_path)
    resnet_bb = load_backbone(RESNET50, resnet_path)

    torch.manual_seed(config.seed)
    generator = build_generator(config.generator)
    discriminator = build_discriminator(input_size=config.hr_patch,
                                        base_width=config.disc_base_width)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.base_lr, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.base_lr, betas=betas)
    sampler = PatchSampler(dataset, patch=config.hr_patch, scale=config.scale,
                           seed=config.seed)
    return TrainState(config, generator, discriminator, opt_g, opt_d,
                      truncate(vgg_bb, config.vgg_tap, validate_range=False),
                      truncate(resnet_bb, config.resnet_tap, validate_range=False),
                      sampler)


def train_step(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor]) -> dict:
    """One discriminator update then one generator update; returns the step record."""
    cfg = state.config
    weights = cfg.loss_weights
    hr, lr = batch
    current_lr = schedule_lr(state.iteration, cfg)
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = current_lr

    sr = state.generator(lr)

    # discriminator step
    state.opt_d.zero_grad()
    d_real = state.discriminator(hr)
    d_fake = state.discriminator(sr.detach())
    d_loss = losses.adversarial_loss_discriminator(d_real, d_fake)
    d_loss.backward()
    state.opt_d.step()

    # generator step
    state.opt_g.zero_grad()
    with torch.no_grad():
        d_real_ref = state.discriminator(hr)
        hr_vgg = state.vgg_extractor(hr)
        hr_res = state.resnet_extractor(hr)
    d_fake_g = state.discriminator(sr)
    adv = losses.adversarial_loss_generator(d_real_ref, d_fake_g)
    content = losses.content_loss(sr, hr)
    l_vgg = losses.vgg_loss(extract(state.vgg_extractor, sr),
                            FeatureMap(hr_vgg, cfg.vgg_tap))
    l_res = losses.resnet_loss(extract(state.resnet_extractor, sr),
                               FeatureMap(hr_res, cfg.resnet_tap))
    breakdown = losses.dp_loss(l_vgg, l_res, weights)
    total = losses.total_generator_loss(content, adv, breakdown.l_dp, weights)
    record = {
        "iteration": state.iteration,
        **breakdown.floats(),
        "content": float(content.detach()),
        "adversarial": float(adv.detach()),
        "total": float(total.detach()),
    }
    if not math.isfinite(record["total"]) or not math.isfinite(float(d_loss.detach())):
        raise TrainingDiverged(f"non-finite loss at iteration {state.iteration}", record)
    total.backward()
    state.opt_g.step()

    state.iteration += 1
    return record


class LossLog:
    """Append-only tab-delimited per-step loss records."""

    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        mode = "a" if append and self.path.exists() else "w"
        self._fh = open(self.path, mode)
        if mode == "w":
            self._fh.write("\t".join(LOG_COLUMNS) + "\n")

    def write(self, record: dict) -> None:
        self._fh.write("\t".join(repr(record[c]) if c != "iteration" else str(record[c])
                                 for c in LOG_COLUMNS) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read(path: str | Path) -> list[dict]:
        lines = Path(path).read_text().strip().splitlines()
        header = lines[0].split("\t")
        out = []
        for line in lines[1:]:
            vals = line.split("\t")
            rec = {k: (int(v) if k == "iteration" else float(v)) for k, v in zip(header, vals)}
            out.append(rec)
        return out


def checkpoint_save(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "config": state.config.to_dict(),
        "iteration": state.iteration,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "sampler_rng": state.sampler.rng.bit_generator.state,
    }, path)
    return path


def checkpoint_load(path: str | Path, dataset: list[np.ndarray],
                    out_dir: str | Path) -> TrainState:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        config = TrainConfig.from_dict(payload["config"])
    except Exception as exc:
        raise RuntimeError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    state = init_state(config, dataset, out_dir)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.iteration = payload["iteration"]
    torch.set_rng_state(payload["torch_rng"])
    state.sampler.rng.bit_generator.state = payload["sampler_rng"]
    return state


def run_training(config: TrainConfig, dataset: list[np.ndarray], out_dir: str | Path,
                 resume: str | Path | None = None) -> dict:
    """Full training loop; returns paths of the final checkpoint and loss log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume:
        state = checkpoint_load(resume, dataset, out_dir)
    else:
        state = init_state(config, dataset, out_dir)
    config.save(out_dir / "config.yaml")
    log = LossLog(out_dir / "loss_log.tsv", append=state.iteration > 0)
    records = []
    try:
        while state.iteration < config.total_iterations:
            batch = state.sampler.next_batch(config.batch_size)
            record = train_step(state, (batch[0], batch[1]))
            log.write(record)
            records.append(record)
            if state.iteration % config.checkpoint_interval == 0:
                checkpoint_save(state, out_dir / f"ckpt_{state.iteration:07d}.pt")
    finally:
        log.close()
    final = checkpoint_save(state, out_dir / "ckpt_final.pt")
    return {"checkpoint": final, "loss_log": out_dir / "loss_log.tsv", "records": records,
            "state": state}
