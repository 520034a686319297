import numpy as np
import pytest
import torch

from dpsr.features import (RESNET50, VGG19, load_backbone, save_random_weights)


@pytest.fixture(scope="session")
def weights_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("weights")
    save_random_weights(VGG19, d / "vgg19.pt", seed=0)
    save_random_weights(RESNET50, d / "resnet50.pt", seed=1)
    return d


@pytest.fixture(scope="session")
def vgg_backbone(weights_dir):
    return load_backbone(VGG19, weights_dir / "vgg19.pt")


@pytest.fixture(scope="session")
def resnet_backbone(weights_dir):
    return load_backbone(RESNET50, weights_dir / "resnet50.pt")


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
