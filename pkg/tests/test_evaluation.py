"""
File: tests/test_evaluation.py
Description: Tests for deployment-time evaluation: only the naive filter and
the actor run, results are reproducible, and the per-episode debug logs add
up to the reported returns.
"""

# Standard Library Imports
import csv

# Third-Party Imports
import numpy as np
import pytest

# Internal Imports
from app.agents.actor_critic import Actor
from app.agents.evaluation import evaluate
from app.agents.world_model import Wiring
from app.envs.gridworld import NUM_ACTIONS, GridWorld, GridWorldConfig
from tests.helpers import FEATURE_DIM, make_world


@pytest.fixture
def deployment(tiny_grid):
    world = make_world(
        Wiring(), obs_dim=tiny_grid.observation_dim, priv_dim=tiny_grid.privileged_dim
    )
    actor = Actor(FEATURE_DIM, NUM_ACTIONS, 8, np.random.default_rng(2))
    return GridWorld(tiny_grid), actor, world


class TestEvaluate:
    def test_privileged_information_is_never_read(self, deployment):
        # Arrange
        env, actor, world = deployment
        calls = world.privileged.forward_calls

        # Act
        result = evaluate(env, actor, world, episodes=3)

        # Assert
        assert env.privileged_reads == 0
        assert world.privileged.forward_calls == calls
        assert len(result.returns) == len(result.costs) == 3

    def test_only_the_naive_filter_runs(self, deployment, mocker):
        env, actor, world = deployment
        privileged_step = mocker.spy(world.privileged, "posterior_step")
        naive_filter = mocker.spy(world, "filter_step")

        evaluate(env, actor, world, episodes=1)

        privileged_step.assert_not_called()
        assert naive_filter.call_count > 0

    def test_same_seed_gives_the_same_result(self, deployment):
        env, actor, world = deployment

        first = evaluate(env, actor, world, episodes=2, seed=11)
        second = evaluate(env, actor, world, episodes=2, seed=11)

        assert first == second

    def test_hazard_free_grid_has_zero_cost(self, tiny_grid):
        config = GridWorldConfig(**{**tiny_grid.model_dump(), "hazards": []})
        world = make_world(
            Wiring(), obs_dim=config.observation_dim, priv_dim=config.privileged_dim
        )
        actor = Actor(FEATURE_DIM, NUM_ACTIONS, 8, np.random.default_rng(2))

        result = evaluate(GridWorld(config), actor, world, episodes=3)

        assert result.mean_cost == 0.0
        assert result.costs == [0.0, 0.0, 0.0]

    def test_greedy_evaluation_runs(self, deployment):
        env, actor, world = deployment

        result = evaluate(env, actor, world, episodes=2, greedy=True)

        assert np.isfinite(result.mean_return)

    def test_episode_logs_add_up_to_the_returns(self, deployment, tmp_path):
        # Arrange
        env, actor, world = deployment

        # Act
        result = evaluate(env, actor, world, episodes=2, log_dir=tmp_path)

        # Assert
        for index in range(2):
            with (tmp_path / f"episode_{index:03d}.csv").open(newline="") as handle:
                rows = list(csv.DictReader(handle))
            assert sum(float(r["r"]) for r in rows) == pytest.approx(result.returns[index])
            assert sum(float(r["c"]) for r in rows) == pytest.approx(result.costs[index])
