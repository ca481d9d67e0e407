"""
File: tests/conftest.py
Description: Shared pytest fixtures for the lab test suite, plus the
--runslow switch for the long acceptance checks.
"""

# Load environment variables from .env file for tests
from dotenv import load_dotenv

load_dotenv()

import numpy as np
import pytest

from app.core.config import (
    ActorCriticConfig,
    ModelConfig,
    RunConfig,
    TrainingConfig,
)
from app.envs.gridworld import GridWorldConfig
from app.solver.generator import InstanceGenerator
from app.solver.tabular import load_instance
from app.utils.loader import fixture_path


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow acceptance tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance check")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_state_model():
    """Two-state, two-action, two-observation fixture instance."""
    return load_instance(fixture_path("two_state.json"))


@pytest.fixture
def tiger_model():
    return InstanceGenerator.tiger_instance()


@pytest.fixture
def corridor_config():
    """1x5 corridor, start (0,0), hazard (2,0), goal (4,0)."""
    return GridWorldConfig(
        width=5,
        height=1,
        hazards=[(2, 0)],
        goal=(4, 0),
        start_cells=[(0, 0)],
        noise=0.0,
        max_steps=20,
    )


@pytest.fixture
def tiny_grid():
    return GridWorldConfig(
        width=3,
        height=3,
        hazards=[(1, 1)],
        goal=(2, 2),
        start_cells=[(0, 0)],
        noise=0.1,
        max_steps=12,
        budget=1.0,
    )


@pytest.fixture
def tiny_run_config(tiny_grid):
    """A run small enough to train for a few hundred steps inside a unit test."""
    return RunConfig(
        name="tiny",
        seed=3,
        env=tiny_grid,
        model=ModelConfig(groups=2, classes=3, deter=8, embed=8, hidden=8),
        actor_critic=ActorCriticConfig(horizon=3, hidden=8),
        training=TrainingConfig(
            total_env_steps=60,
            train_ratio=16,
            batch_size=2,
            batch_length=4,
            prefill_steps=20,
            replay_capacity=1000,
            eval_interval=20,
            eval_episodes=2,
            record_wall_time=False,
        ),
    )
