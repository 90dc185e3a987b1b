import numpy as np
import pytest

from mtvit.tails import MultiTailViT, TailConfig
from mtvit.vit import EncoderConfig

MICRO_ENCODER = EncoderConfig(depth=1, dim=16, heads=2, mlp_ratio=4, classes=10)
MICRO_TAILS = (TailConfig(4, 2), TailConfig(2, 4))


def micro_model(seed: int = 0, dtype=np.float64) -> MultiTailViT:
    """Two tails, d=16, one layer, 8x8 RGB inputs."""
    return MultiTailViT.init(MICRO_ENCODER, MICRO_TAILS, (8, 8), 3, seed=seed, dtype=dtype)


def micro_batch(seed: int, batch: int = 3, dtype=np.float64):
    rng = np.random.default_rng(seed + 1000)
    return rng.random((batch, 8, 8, 3)).astype(dtype), rng.integers(0, 10, batch)


@pytest.fixture
def micro():
    return micro_model()
