import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from lorax import BackboneConfig, build_backbone


@pytest.fixture
def tiny_config():
    return BackboneConfig(image_size=16, patch_size=8, channels=1, depth=2,
                          embed_dim=16, heads=2, seed=7)


@pytest.fixture
def tiny_backbone(tiny_config):
    return build_backbone(tiny_config)


@pytest.fixture
def rand_images():
    def make(n, size=16, channels=1, seed=0):
        g = torch.Generator().manual_seed(seed)
        return torch.rand(n, channels, size, size, generator=g)

    return make
