"""
File: tests/helpers.py
Description: Small builders shared by the world-model, imagination and
evaluation tests.
"""

# Third-Party Imports
import numpy as np

# Internal Imports
from app.agents.trainer import apply_ablation
from app.agents.world_model import PIGWorldModel, Wiring
from app.core.config import (
    AblationConfig,
    LossConfig,
    ModelConfig,
    RunConfig,
    TrainingConfig,
)
from app.envs.gridworld import NUM_ACTIONS
from app.envs.replay import SequenceBatch

OBS_DIM, PRIV_DIM = 6, 4
TINY_MODEL = ModelConfig(groups=2, classes=3, deter=8, embed=8, hidden=8)
FEATURE_DIM = TINY_MODEL.deter + TINY_MODEL.groups * TINY_MODEL.classes


def make_batch(rng: np.random.Generator, B: int = 2, T: int = 4) -> SequenceBatch:
    actions = np.eye(NUM_ACTIONS)[rng.integers(NUM_ACTIONS, size=(B, T))]
    actions[:, 0] = 0.0
    is_first = np.zeros((B, T))
    is_first[:, 0] = 1.0
    return SequenceBatch(
        obs=(rng.random((B, T, OBS_DIM)) < 0.3).astype(np.float64),
        priv=rng.normal(size=(B, T, PRIV_DIM)),
        action=actions,
        reward=rng.normal(size=(B, T)),
        cost=(rng.random((B, T)) < 0.2).astype(np.float64),
        is_first=is_first,
        is_terminal=np.zeros((B, T)),
        starts=np.zeros(B, dtype=np.int64),
    )


def make_world(
    wiring: Wiring, seed: int = 0, obs_dim: int = OBS_DIM, priv_dim: int = PRIV_DIM
) -> PIGWorldModel:
    return PIGWorldModel(
        obs_dim,
        priv_dim,
        NUM_ACTIONS,
        TINY_MODEL,
        LossConfig(),
        TrainingConfig(),
        wiring,
        np.random.default_rng(seed),
    )


def wiring_for(name: str) -> Wiring:
    return apply_ablation(RunConfig(ablation=AblationConfig.from_name(name)))
