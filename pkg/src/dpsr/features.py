"""Frozen VGG19 / ResNet50 backbones and truncated feature extraction.

Feature taps are addressed with the (i, j) / (m, n) convention used for
perceptual losses in SR work:

* VGG19 tap (i, j): the j-th convolution in the run of convolutions before
  the i-th max-pool, usually taken before the ReLU.
* ResNet50 tap (m, n): the n-th bottleneck of stage m, usually taken after
  the block's final ReLU.

Backbone weights live on disk as a ``torch.save``-d state dict (``.pt``);
``scripts/fetch_weights.py`` downloads the ImageNet-pretrained ones, and
``save_random_weights`` writes healthy random weights for offline/toy use.
No network access happens at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor, nn
from torchvision import models as tv_models

VGG19 = "vgg19"
RESNET50 = "resnet50"
ARCHITECTURES = (VGG19, RESNET50)

BEFORE_ACT = "before_activation"
AFTER_ACT = "after_activation"

# convs per block / bottlenecks per stage, and output channel widths
VGG_BLOCK_CONVS = (2, 2, 4, 4, 4)
VGG_BLOCK_WIDTHS = (64, 128, 256, 512, 512)
RESNET_STAGE_BLOCKS = (3, 4, 6, 3)
RESNET_STAGE_WIDTHS = (256, 512, 1024, 2048)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

INPUT_RANGE_TOL = 1e-6


class TapError(ValueError):
    """Tap indices out of range for the chosen backbone."""


class WeightLoadError(RuntimeError):
    """Weight file missing or inconsistent with the architecture."""


def _default_activation_point(backbone: str) -> str:
    return BEFORE_ACT if backbone == VGG19 else AFTER_ACT


@dataclass(frozen=True)
class FeatureTapSpec:
    backbone: str
    index_a: int  # i for VGG (max-pool block), m for ResNet (stage)
    index_b: int  # j for VGG (conv within block), n for ResNet (bottleneck)
    activation_point: str = ""

    def __post_init__(self):
        if self.backbone not in ARCHITECTURES:
            raise TapError(f"unknown backbone {self.backbone!r}; expected one of {ARCHITECTURES}")
        if not self.activation_point:
            object.__setattr__(self, "activation_point", _default_activation_point(self.backbone))
        if self.activation_point not in (BEFORE_ACT, AFTER_ACT):
            raise TapError(f"bad activation_point {self.activation_point!r}")
        if self.backbone == VGG19:
            if not 1 <= self.index_a <= 5:
                raise TapError(f"VGG19 block index {self.index_a} out of range [1, 5]")
            limit = VGG_BLOCK_CONVS[self.index_a - 1]
            if not 1 <= self.index_b <= limit:
                raise TapError(
                    f"VGG19 block {self.index_a} has {limit} convs; got conv index {self.index_b}"
                )
        else:
            if not 1 <= self.index_a <= 4:
                raise TapError(f"ResNet50 stage index {self.index_a} out of range [1, 4]")
            limit = RESNET_STAGE_BLOCKS[self.index_a - 1]
            if not 1 <= self.index_b <= limit:
                raise TapError(
                    f"ResNet50 stage {self.index_a} has {limit} bottlenecks; "
                    f"got bottleneck index {self.index_b}"
                )

    @property
    def spatial_stride(self) -> int:
        """Total downsampling factor from input to this tap."""
        if self.backbone == VGG19:
            return 2 ** (self.index_a - 1)
        return 4 * 2 ** (self.index_a - 1)

    @property
    def channels(self) -> int:
        if self.backbone == VGG19:
            return VGG_BLOCK_WIDTHS[self.index_a - 1]
        return RESNET_STAGE_WIDTHS[self.index_a - 1]

    def label(self) -> str:
        kind = "phi" if self.backbone == VGG19 else "beta"
        return f"{kind}_{self.index_a}_{self.index_b}"


def vgg_tap(i: int, j: int, activation_point: str = BEFORE_ACT) -> FeatureTapSpec:
    return FeatureTapSpec(VGG19, i, j, activation_point)


def resnet_tap(m: int, n: int, activation_point: str = AFTER_ACT) -> FeatureTapSpec:
    return FeatureTapSpec(RESNET50, m, n, activation_point)


@dataclass
class FeatureMap:
    data: Tensor  # (batch, C, H, W)
    tap: FeatureTapSpec

    @property
    def shape_chw(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])


@dataclass
class PretrainedBackbone:
    architecture: str
    model: nn.Module = field(repr=False)

    def state_dict(self):
        return self.model.state_dict()


def _reference_model(architecture: str) -> nn.Module:
    if architecture == VGG19:
        return tv_models.vgg19(weights=None)
    if architecture == RESNET50:
        return tv_models.resnet50(weights=None)
    raise WeightLoadError(f"unknown architecture {architecture!r}")


def load_backbone(architecture: str, weights_path: str | Path) -> PretrainedBackbone:
    """Load a frozen backbone from a saved state dict, validating names and shapes."""
    weights_path = Path(weights_path)
    if not weights_path.exists():
        raise WeightLoadError(f"weights file not found: {weights_path}")
    model = _reference_model(architecture)
    loaded = torch.load(weights_path, map_location="cpu", weights_only=True)
    reference = model.state_dict()
    for name, ref in reference.items():
        if name not in loaded:
            raise WeightLoadError(f"{architecture} weights missing parameter {name!r}")
        if tuple(loaded[name].shape) != tuple(ref.shape):
            raise WeightLoadError(
                f"{architecture} parameter {name!r} has shape {tuple(loaded[name].shape)}, "
                f"expected {tuple(ref.shape)}"
            )
    model.load_state_dict(loaded)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return PretrainedBackbone(architecture, model)


def save_random_weights(architecture: str, path: str | Path, seed: int = 0) -> Path:
    """Write a random (but activation-preserving) weight file for offline use.

    Convolutions get Kaiming-normal fan-out init so deep taps keep a usable
    activation scale; this stands in for pretrained weights in toy runs and
    self-tests only.
    """
    path = Path(path)
    torch.manual_seed(seed)
    model = _reference_model(architecture)
    for mod in model.modules():
        if isinstance(mod, nn.Conv2d):
            nn.init.kaiming_normal_(mod.weight, mode="fan_out", nonlinearity="relu")
            if mod.bias is not None:
                nn.init.zeros_(mod.bias)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    return path


class FeatureExtractor(nn.Module):
    """Forward pass of a frozen backbone truncated exactly at one tap.

    Consumes RGB batches in [0, 1]; ImageNet mean/std normalization is applied
    internally. Gradients flow to the input images, never to the backbone.
    Immutable after construction; safe for concurrent read-only use.
    """

    def __init__(self, backbone: PretrainedBackbone, tap: FeatureTapSpec,
                 validate_range: bool = True):
        super().__init__()
        self.validate_range = validate_range
        if tap.backbone != backbone.architecture:
            raise TapError(
                f"tap targets {tap.backbone} but backbone is {backbone.architecture}"
            )
        self.tap = tap
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        if tap.backbone == VGG19:
            self._layers = _vgg_prefix(backbone.model, tap)
            self._stem = None
            self._stages = None
            self._final_block = None
        else:
            stem, stages, final_block = _resnet_prefix(backbone.model, tap)
            self._layers = None
            self._stem = stem
            self._stages = stages
            self._final_block = final_block
        self.eval()

    def _validate(self, images: Tensor) -> None:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(images.shape)}")
        if self.validate_range:
            lo, hi = images.min().item(), images.max().item()
            if lo < -INPUT_RANGE_TOL or hi > 1.0 + INPUT_RANGE_TOL:
                raise ValueError(f"input values outside [0, 1]: range [{lo:.4g}, {hi:.4g}]")
        stride = self.tap.spatial_stride
        if min(images.shape[2], images.shape[3]) < stride:
            raise ValueError(
                f"input {tuple(images.shape[2:])} too small for tap "
                f"{self.tap.label()} (needs >= {stride} per side)"
            )

    def forward(self, images: Tensor) -> Tensor:
        self._validate(images)
        x = (images - self.mean) / self.std
        if self._layers is not None:
            return self._layers(x)
        x = self._stem(x)
        x = self._stages(x)
        if self._final_block is None:
            return x
        return _bottleneck_forward(self._final_block, x, pre_relu=True)


def _vgg_prefix(model: nn.Module, tap: FeatureTapSpec) -> nn.Sequential:
    """Slice torchvision VGG19 ``features`` up to (and including) the tap layer."""
    layers = []
    block = 1
    conv_in_block = 0
    features = list(model.features.children())
    for idx, layer in enumerate(features):
        if isinstance(layer, nn.Conv2d):
            conv_in_block += 1
            if block == tap.index_a and conv_in_block == tap.index_b:
                layers.append(layer)
                if tap.activation_point == AFTER_ACT:
                    layers.append(features[idx + 1])  # the following ReLU
                return nn.Sequential(*layers)
        elif isinstance(layer, nn.MaxPool2d):
            block += 1
            conv_in_block = 0
        layers.append(layer)
    raise TapError(f"tap {tap.label()} not reachable in VGG19")  # pragma: no cover


def _resnet_prefix(model: nn.Module, tap: FeatureTapSpec):
    """Split torchvision ResNet50 into (stem, complete blocks, optional pre-relu block)."""
    stem = nn.Sequential(model.conv1, model.bn1, model.relu, model.maxpool)
    stages = [model.layer1, model.layer2, model.layer3, model.layer4]
    blocks = []
    for m in range(1, tap.index_a):
        blocks.extend(stages[m - 1].children())
    target_stage = list(stages[tap.index_a - 1].children())
    blocks.extend(target_stage[: tap.index_b - 1])
    final = target_stage[tap.index_b - 1]
    if tap.activation_point == AFTER_ACT:
        blocks.append(final)
        final = None
    return stem, nn.Sequential(*blocks), final


def _bottleneck_forward(block: nn.Module, x: Tensor, pre_relu: bool) -> Tensor:
    """Torchvision Bottleneck forward, optionally stopping before the final ReLU."""
    identity = block.downsample(x) if block.downsample is not None else x
    out = block.relu(block.bn1(block.conv1(x)))
    out = block.relu(block.bn2(block.conv2(out)))
    out = block.bn3(block.conv3(out)) + identity
    if pre_relu:
        return out
    return block.relu(out)  # pragma: no cover


def truncate(backbone: PretrainedBackbone, tap: FeatureTapSpec,
             validate_range: bool = True) -> FeatureExtractor:
    """Build an extractor whose forward pass stops exactly at ``tap``.

    ``validate_range=False`` skips the [0, 1] input check; the training loop
    uses this because raw generator output drifts outside the range early on.
    """
    return FeatureExtractor(backbone, tap, validate_range=validate_range)


def extract(extractor: FeatureExtractor, images: Tensor) -> FeatureMap:
    return FeatureMap(extractor(images), extractor.tap)
