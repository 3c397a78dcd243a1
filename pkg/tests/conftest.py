import numpy as np
import pytest

from minivla import depth as dp
from minivla import sim
from minivla.config import ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    """Smallest full-composition model; used wherever finite differences run."""
    base = dict(image_hw=8, patch=4, d_model=16, vit_blocks=1, resampler_k=2,
                decoder_layers=2, lstm_layers=2, lstm_width=8, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def synthetic_obs(rng: np.random.Generator, hw: int) -> sim.Observation:
    """Random but well-formed observation at the given frame size."""
    return sim.Observation(
        rgb_static=rng.random((hw, hw, 3)).astype(np.float32),
        rgb_gripper=rng.random((hw, hw, 3)).astype(np.float32),
        depth_static=(0.6 + 0.4 * rng.random((hw, hw))).astype(np.float32),
        depth_gripper=(0.6 + 0.4 * rng.random((hw, hw))).astype(np.float32),
    )


def synthetic_stats() -> dp.DepthStats:
    return dp.DepthStats(0.6, 1.0, 0.5, 0.29)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
