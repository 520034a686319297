"""Loss terms for the generator/discriminator pair.

The generator total is ``lambda * content + eta * adversarial + gamma * dp``
where ``dp`` combines the VGG-feature loss with a dynamically weighted
ResNet-feature loss: ``l_dp = l_vgg + (1/mu) * zeta * l_res``. ``zeta`` is the
current ratio ``(l_vgg + c) / (l_res + c)`` taken as a plain number, so it
rescales the ResNet gradient without redirecting it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor

from .features import VGG19, RESNET50, FeatureMap

INFINITY = math.inf


class LossConfigError(ValueError):
    pass


@dataclass
class LossWeights:
    """Coefficients of the generator objective.

    ``mu`` may be ``math.inf``, which drops the ResNet term entirely (the
    VGG-only baseline). ``dynamic_weighting=False`` replaces zeta with the
    constant 1 (the static ablation arm).
    """

    lambda_content: float = 1e-2
    eta_adversarial: float = 5e-3
    gamma_dp: float = 1.0
    mu: float = 0.5
    # small enough that the fixed-ratio identity holds to 1e-6 even for
    # losses down at 1e-4; its only job is keeping the denominator nonzero
    c: float = 1e-12
    dynamic_weighting: bool = True

    def __post_init__(self):
        if self.c <= 0:
            raise LossConfigError(f"c must be positive, got {self.c}")
        if not (self.mu > 0 or self.mu == INFINITY):
            raise LossConfigError(f"mu must be > 0 or infinity, got {self.mu}")


@dataclass
class DPLossBreakdown:
    """All intermediate values of one dual-perceptual-loss evaluation."""

    l_vgg: Tensor
    l_res: Tensor
    zeta: float
    weighted_res_term: Tensor
    l_dp: Tensor

    def floats(self) -> dict[str, float]:
        return {
            "l_vgg": float(self.l_vgg.detach()),
            "l_res": float(self.l_res.detach()),
            "zeta": self.zeta,
            "weighted_res_term": float(self.weighted_res_term.detach()),
            "l_dp": float(self.l_dp.detach()),
        }


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else torch.as_tensor(float(x), dtype=torch.float64)


def content_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Pixel-wise L1 distance, averaged over all elements."""
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


def _feature_l1(sr_features: FeatureMap, hr_features: FeatureMap, expected_backbone: str) -> Tensor:
    if sr_features.tap != hr_features.tap:
        raise ValueError(
            f"tap mismatch: {sr_features.tap.label()} vs {hr_features.tap.label()}"
        )
    if sr_features.tap.backbone != expected_backbone:
        raise ValueError(
            f"expected a {expected_backbone} tap, got {sr_features.tap.label()}"
        )
    if sr_features.data.shape != hr_features.data.shape:
        raise ValueError(
            f"feature shape mismatch: {tuple(sr_features.data.shape)} vs "
            f"{tuple(hr_features.data.shape)}"
        )
    # 1/(C*W*H) * sum |delta| per image, mean over the batch == global mean abs
    return (sr_features.data - hr_features.data).abs().mean()


def vgg_loss(sr_features: FeatureMap, hr_features: FeatureMap) -> Tensor:
    return _feature_l1(sr_features, hr_features, VGG19)


def resnet_loss(sr_features: FeatureMap, hr_features: FeatureMap) -> Tensor:
    return _feature_l1(sr_features, hr_features, RESNET50)


def zeta(l_vgg, l_res, c: float = 1e-12) -> float:
    """Current value of (l_vgg + c) / (l_res + c), detached from the graph.

    Returned as a plain float so it can only scale downstream gradients,
    never route them through l_vgg or l_res.
    """
    if c <= 0:
        raise LossConfigError(f"c must be positive, got {c}")

    def val(x):
        return float(x.detach()) if isinstance(x, Tensor) else float(x)

    return (val(l_vgg) + c) / (val(l_res) + c)


def dp_loss(l_vgg, l_res, weights: LossWeights) -> DPLossBreakdown:
    """Dual perceptual loss with dynamic (or static, or absent) ResNet weighting."""
    l_vgg = _as_tensor(l_vgg)
    l_res = _as_tensor(l_res)
    z = zeta(l_vgg, l_res, weights.c)
    if weights.mu == INFINITY:
        weighted = torch.zeros_like(l_res)
        total = l_vgg
    else:
        factor = (z if weights.dynamic_weighting else 1.0) / weights.mu
        weighted = factor * l_res
        total = l_vgg + weighted
    return DPLossBreakdown(l_vgg=l_vgg, l_res=l_res, zeta=z, weighted_res_term=weighted, l_dp=total)


def _check_scores(d_real: Tensor, d_fake: Tensor) -> None:
    if d_real.numel() == 0 or d_fake.numel() == 0:
        raise ValueError("empty score batch")


def ra_discriminator_output(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Relativistic average output sigma(d_real - mean(d_fake)).

    Swap the arguments for the fake-side counterpart.
    """
    _check_scores(d_real, d_fake)
    return torch.sigmoid(d_real - d_fake.mean())


def adversarial_loss_generator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Relativistic-average BCE, generator side: fakes should beat the real average."""
    _check_scores(d_real, d_fake)
    real_rel = d_real - d_fake.mean()
    fake_rel = d_fake - d_real.mean()
    loss_real = F.binary_cross_entropy_with_logits(real_rel, torch.zeros_like(real_rel))
    loss_fake = F.binary_cross_entropy_with_logits(fake_rel, torch.ones_like(fake_rel))
    return (loss_real + loss_fake) / 2


def adversarial_loss_discriminator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Relativistic-average BCE, discriminator side."""
    _check_scores(d_real, d_fake)
    real_rel = d_real - d_fake.mean()
    fake_rel = d_fake - d_real.mean()
    loss_real = F.binary_cross_entropy_with_logits(real_rel, torch.ones_like(real_rel))
    loss_fake = F.binary_cross_entropy_with_logits(fake_rel, torch.zeros_like(fake_rel))
    return (loss_real + loss_fake) / 2


def total_generator_loss(content, adversarial, dp, weights: LossWeights) -> Tensor:
    """Weighted sum lambda*content + eta*adversarial + gamma*dp."""
    terms = {"content": content, "adversarial": adversarial, "dp": dp}
    for name, value in terms.items():
        v = float(value.detach()) if isinstance(value, Tensor) else float(value)
        if not math.isfinite(v):
            raise ValueError(f"non-finite {name} loss: {v}")
    return (
        weights.lambda_content * _as_tensor(content)
        + weights.eta_adversarial * _as_tensor(adversarial)
        + weights.gamma_dp * _as_tensor(dp)
    )
