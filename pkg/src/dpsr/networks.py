"""Generator (RRDB trunk, BN-free) and the 128-input discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn


class NetworkConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    num_rrdb_blocks: int = 23
    feature_width: int = 64
    growth_channels: int = 32
    residual_scaling: float = 0.2
    scale_factor: int = 4

    def __post_init__(self):
        if self.scale_factor not in (2, 3, 4):
            raise NetworkConfigError(f"scale_factor must be 2, 3 or 4, got {self.scale_factor}")
        if not 0 < self.residual_scaling <= 1:
            raise NetworkConfigError(f"residual_scaling must be in (0, 1], got {self.residual_scaling}")

    @property
    def upsample_factors(self) -> tuple[int, ...]:
        # x4 uses two x2 blocks; x3 a single x3 block; x2 a single x2 block
        return (2, 2) if self.scale_factor == 4 else (self.scale_factor,)


def toy_generator_config(scale_factor: int = 4) -> GeneratorConfig:
    """Desk-scale preset used by smoke runs and tests."""
    return GeneratorConfig(num_rrdb_blocks=4, feature_width=32, growth_channels=16,
                           scale_factor=scale_factor)


class DenseBlock(nn.Module):
    """Five densely connected 3x3 convs with a scaled residual output."""

    def __init__(self, width: int, growth: int, residual_scaling: float):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(width + i * growth, growth if i < 4 else width, 3, 1, 1)
            for i in range(5)
        )
        self.lrelu = nn.LeakyReLU(0.2, inplace=True)
        self.residual_scaling = residual_scaling

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for conv in self.convs[:-1]:
            feats.append(self.lrelu(conv(torch.cat(feats, dim=1))))
        out = self.convs[-1](torch.cat(feats, dim=1))
        return x + self.residual_scaling * out


class RRDB(nn.Module):
    """Residual-in-residual dense block: three dense blocks plus a scaled skip."""

    def __init__(self, width: int, growth: int, residual_scaling: float):
        super().__init__()
        self.blocks = nn.Sequential(
            DenseBlock(width, growth, residual_scaling),
            DenseBlock(width, growth, residual_scaling),
            DenseBlock(width, growth, residual_scaling),
        )
        self.residual_scaling = residual_scaling

    def forward(self, x: Tensor) -> Tensor:
        return x + self.residual_scaling * self.blocks(x)


class UpsampleBlock(nn.Module):
    """Nearest-neighbor resize, 3x3 conv, LeakyReLU."""

    def __init__(self, width: int, factor: int):
        super().__init__()
        self.factor = factor
        self.conv = nn.Conv2d(width, width, 3, 1, 1)
        self.lrelu = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x: Tensor) -> Tensor:
        x = F.interpolate(x, scale_factor=self.factor, mode="nearest")
        return self.lrelu(self.conv(x))


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.feature_width
        self.conv_first = nn.Conv2d(3, w, 3, 1, 1)
        self.trunk = nn.Sequential(
            *(RRDB(w, config.growth_channels, config.residual_scaling)
              for _ in range(config.num_rrdb_blocks))
        )
        self.trunk_conv = nn.Conv2d(w, w, 3, 1, 1)
        self.upsampling = nn.Sequential(
            *(UpsampleBlock(w, f) for f in config.upsample_factors)
        )
        self.conv_hr = nn.Conv2d(w, w, 3, 1, 1)
        self.lrelu = nn.LeakyReLU(0.2, inplace=True)
        self.conv_last = nn.Conv2d(w, 3, 3, 1, 1)

    def forward(self, lr: Tensor) -> Tensor:
        feat = self.conv_first(lr)
        feat = feat + self.trunk_conv(self.trunk(feat))
        feat = self.upsampling(feat)
        out = self.conv_last(self.lrelu(self.conv_hr(feat)))
        if not torch.isfinite(out).all():
            raise RuntimeError("generator produced non-finite output (divergence)")
        return out


def build_generator(config: GeneratorConfig, seed: int | None = None) -> Generator:
    if seed is not None:
        torch.manual_seed(seed)
    gen = Generator(config)
    # small-variance init of trunk convs stabilizes early GAN training
    for module in gen.trunk.modules():
        if isinstance(module, nn.Conv2d):
            module.weight.data.mul_(0.1)
    return gen


class Discriminator(nn.Module):
    """VGG-style strided-conv discriminator emitting one raw score per image.

    The sigmoid is applied only inside the relativistic-average output, so
    forward() returns unbounded reals.
    """

    def __init__(self, input_size: int = 128, base_width: int = 64):
        super().__init__()
        if input_size % 32 != 0:
            raise NetworkConfigError(f"input_size must be a multiple of 32, got {input_size}")
        self.input_size = input_size

        def block(c_in, c_out, stride, bn=True):
            layers = [nn.Conv2d(c_in, c_out, 3 if stride == 1 else 4, stride, 1, bias=not bn)]
            if bn:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            return layers

        w = base_width
        self.features = nn.Sequential(
            *block(3, w, 1, bn=False),
            *block(w, w, 2),
            *block(w, 2 * w, 1),
            *block(2 * w, 2 * w, 2),
            *block(2 * w, 4 * w, 1),
            *block(4 * w, 4 * w, 2),
            *block(4 * w, 8 * w, 1),
            *block(8 * w, 8 * w, 2),
            *block(8 * w, 8 * w, 1),
            *block(8 * w, 8 * w, 2),
        )
        spatial = input_size // 32
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(8 * w * spatial * spatial, 100),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(100, 1),
        )

    def forward(self, images: Tensor) -> Tensor:
        if images.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"discriminator expects {self.input_size}x{self.input_size} input, "
                f"got {tuple(images.shape[-2:])}"
            )
        return self.classifier(self.features(images)).squeeze(1)


def build_discriminator(input_size: int = 128, base_width: int = 64,
                        seed: int | None = None) -> Discriminator:
    if seed is not None:
        torch.manual_seed(seed)
    return Discriminator(input_size=input_size, base_width=base_width)


def forward_generator(gen: Generator, lr: Tensor) -> Tensor:
    return gen(lr)


def forward_discriminator(disc: Discriminator, images: Tensor) -> Tensor:
    return disc(images)


def count_normalization_layers(module: nn.Module) -> int:
    """Audit helper: number of normalization layers anywhere in the module."""
    norm_types = (nn.modules.batchnorm._BatchNorm, nn.GroupNorm, nn.LayerNorm,
                  nn.modules.instancenorm._InstanceNorm)
    return sum(isinstance(m, norm_types) for m in module.modules())
