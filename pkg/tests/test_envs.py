"""
File: tests/test_envs.py
Description: Tests for the gridworld simulator, the replay buffer and the
tabular export of small grids.
"""

# Third-Party Imports
import numpy as np
import pytest

# Internal Imports
from app.core.errors import ConfigurationError, EpisodeFinishedError, ReplayNotReady
from app.envs.export import export_tabular, monte_carlo_check
from app.envs.gridworld import (
    GridWorld,
    GridWorldConfig,
    window_pattern,
    write_episode_csv,
)
from app.envs.replay import ReplayBuffer
from app.solver.alpha import witness_beliefs
from app.solver.verifier import verify_value_dominance

RIGHT, STAY = 3, 4


def fill_episode(buffer: ReplayBuffer, length: int, offset: float = 0.0) -> None:
    for t in range(length):
        buffer.add_step(
            obs=np.full(buffer.obs_dim, offset + t),
            priv=np.zeros(buffer.priv_dim),
            action=None if t == 0 else 1,
            reward=offset + t,
            cost=0.0,
        )
    buffer.end_episode()


class TestGridWorld:
    def test_reset_is_deterministic_under_a_seed(self, tiny_grid):
        env_a, env_b = GridWorld(tiny_grid), GridWorld(tiny_grid)

        obs_a, _, state_a = env_a.reset(seed=5)
        obs_b, _, state_b = env_b.reset(seed=5)

        np.testing.assert_array_equal(obs_a, obs_b)
        assert state_a.position == state_b.position

    def test_centre_window_matches_the_neighbourhood(self):
        # Arrange: wall up-left, hazard to the right, goal below
        config = GridWorldConfig(
            width=3,
            height=3,
            walls=[(0, 0)],
            hazards=[(2, 1)],
            goal=(1, 2),
            start_cells=[(1, 1)],
            noise=0.0,
        )
        expected = np.zeros((3, 3, 3))
        expected[0, 0, 0] = 1.0
        expected[1, 1, 2] = 1.0
        expected[2, 2, 1] = 1.0

        # Act
        obs, _, _ = GridWorld(config).reset(seed=0)

        # Assert
        np.testing.assert_array_equal(obs, expected.reshape(-1))
        np.testing.assert_array_equal(window_pattern(config, (1, 1)), expected)

    def test_cells_outside_the_grid_read_as_walls(self, corridor_config):
        obs, _, _ = GridWorld(corridor_config).reset(seed=0)

        walls = obs.reshape(3, 3, 3)[0]

        np.testing.assert_array_equal(walls, [[1, 1, 1], [1, 0, 0], [1, 1, 1]])

    def test_greedy_walk_down_the_corridor(self, corridor_config):
        # Arrange
        config = corridor_config.model_copy(update={"shaping": 0.1})
        env = GridWorld(config)
        env.reset(seed=0)

        # Act
        results = [env.step(RIGHT) for _ in range(4)]

        # Assert
        assert sum(r.reward for r in results) == pytest.approx(4 * 0.1 + 1.0)
        assert [r.cost for r in results] == [0.0, 1.0, 0.0, 0.0]
        assert results[-1].terminal and not results[-2].terminal
        assert env.state.episode_cost == 1.0

    def test_staying_on_an_empty_cell_is_free(self, corridor_config):
        env = GridWorld(corridor_config)
        env.reset(seed=0)

        result = env.step(STAY)

        assert (result.reward, result.cost) == (0.0, 0.0)

    def test_step_after_terminal_is_rejected(self, corridor_config):
        env = GridWorld(corridor_config)
        env.reset(seed=0)
        for _ in range(4):
            env.step(RIGHT)

        with pytest.raises(EpisodeFinishedError):
            env.step(RIGHT)

    def test_truncation_at_max_steps(self, corridor_config):
        env = GridWorld(corridor_config.model_copy(update={"max_steps": 3}))
        env.reset(seed=0)

        results = [env.step(STAY) for _ in range(3)]

        assert results[-1].truncated and not results[-1].terminal
        assert results[-1].done

    def test_action_repeat_sums_micro_steps(self, corridor_config):
        env = GridWorld(corridor_config.model_copy(update={"action_repeat": 2}))
        env.reset(seed=0)

        result = env.step(RIGHT)

        assert env.state.position == (2, 0)
        assert env.state.steps == 2
        assert result.cost == 1.0
        assert result.reward == pytest.approx(2 * 0.05)

    def test_unreachable_goal_is_rejected_on_reset(self, corridor_config):
        blocked = corridor_config.model_copy(update={"walls": [(3, 0)]})

        with pytest.raises(ConfigurationError, match="unreachable"):
            GridWorld(blocked).reset(seed=0)

    @pytest.mark.parametrize(
        "update",
        [{"goal": (9, 0)}, {"hazards": [(4, 0)]}, {"walls": [(4, 0)]}],
        ids=["goal-outside", "goal-on-hazard", "goal-on-wall"],
    )
    def test_invalid_layouts_fail_validation(self, corridor_config, update):
        with pytest.raises(ValueError):
            GridWorldConfig(**{**corridor_config.model_dump(), **update})

    def test_only_privileged_reads_are_counted(self, tiny_grid):
        # Arrange
        env = GridWorld(tiny_grid)
        _, first, _ = env.reset(seed=1)

        # Act
        result = env.step(RIGHT)
        _ = result.observation, result.reward, result.cost
        before = env.privileged_reads
        vector = first.privileged

        # Assert
        assert before == 0
        assert env.privileged_reads == 1
        assert vector.shape == (tiny_grid.privileged_dim,)

    def test_privileged_vector_holds_the_goal_displacement(self, corridor_config):
        env = GridWorld(corridor_config)
        _, first, _ = env.reset(seed=0)

        vector = first.privileged

        np.testing.assert_array_equal(vector[:2], [4.0, 0.0])
        np.testing.assert_array_equal(vector[2:4], [2.0, 0.0])  # nearest hazard

    def test_state_round_trip_replays_the_same_noise(self, tiny_grid):
        env = GridWorld(tiny_grid)
        env.reset(seed=2)
        saved = env.get_state()
        first = env.step(RIGHT).observation

        env.set_state(saved)
        again = env.step(RIGHT).observation

        np.testing.assert_array_equal(first, again)

    def test_episode_log_is_written_as_csv(self, corridor_config, tmp_path):
        env = GridWorld(corridor_config, record_episode=True)
        env.reset(seed=0)
        for _ in range(4):
            env.step(RIGHT)

        write_episode_csv(env.episode_log, tmp_path / "ep.csv")

        lines = (tmp_path / "ep.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,a,r,c,x,y"
        assert len(lines) == 5


class TestReplayBuffer:
    def test_single_episode_of_window_length_is_returned(self, rng):
        buffer = ReplayBuffer(100, obs_dim=2, priv_dim=1, num_actions=3)
        fill_episode(buffer, 4)

        batch = buffer.sample_batch(2, 4, rng)

        np.testing.assert_array_equal(batch.reward[0], [0.0, 1.0, 2.0, 3.0])
        np.testing.assert_array_equal(batch.is_first[0], [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(batch.action[0, 0], np.zeros(3))

    def test_reset_flags_mark_every_stored_episode_start(self, rng):
        buffer = ReplayBuffer(100, obs_dim=1, priv_dim=1, num_actions=2)
        fill_episode(buffer, 3)
        fill_episode(buffer, 4, offset=10.0)

        batch = buffer.sample_batch(3, 7, rng)

        for row in batch.is_first:
            np.testing.assert_array_equal(row, [1, 0, 0, 1, 0, 0, 0])

    def test_not_ready_reports_counts(self, rng):
        buffer = ReplayBuffer(100, obs_dim=1, priv_dim=1, num_actions=2)
        fill_episode(buffer, 3)

        with pytest.raises(ReplayNotReady) as excinfo:
            buffer.sample_batch(1, 5, rng)

        assert (excinfo.value.available, excinfo.value.required) == (3, 5)

    def test_open_episode_is_not_sampled(self, rng):
        buffer = ReplayBuffer(100, obs_dim=1, priv_dim=1, num_actions=2)
        buffer.add_step(np.zeros(1), np.zeros(1), None, 0.0, 0.0)

        with pytest.raises(ReplayNotReady):
            buffer.sample_batch(1, 1, rng)

    def test_window_starts_are_uniform(self):
        # Arrange
        rng = np.random.default_rng(0)
        buffer = ReplayBuffer(100, obs_dim=1, priv_dim=1, num_actions=2)
        fill_episode(buffer, 10)

        # Act
        starts = buffer.sample_batch(100_000, 1, rng).starts

        # Assert: chi-square with 9 degrees of freedom, p = 0.001
        counts = np.bincount(starts, minlength=10)
        chi2 = float(((counts - 10_000) ** 2 / 10_000).sum())
        assert chi2 < 27.88

    def test_sampling_is_deterministic_under_a_seed(self):
        buffer = ReplayBuffer(100, obs_dim=1, priv_dim=1, num_actions=2)
        fill_episode(buffer, 12)

        a = buffer.sample_batch(4, 3, np.random.default_rng(9))
        b = buffer.sample_batch(4, 3, np.random.default_rng(9))

        np.testing.assert_array_equal(a.obs, b.obs)

    def test_oldest_episodes_are_evicted_past_capacity(self):
        buffer = ReplayBuffer(5, obs_dim=1, priv_dim=1, num_actions=2)
        for i in range(3):
            fill_episode(buffer, 3, offset=10.0 * i)

        assert len(buffer) == 3
        assert buffer.num_episodes == 1

    def test_state_round_trip_keeps_pending_steps(self, rng):
        # Arrange
        source = ReplayBuffer(100, obs_dim=2, priv_dim=1, num_actions=3)
        fill_episode(source, 5)
        source.add_step(np.ones(2), np.ones(1), None, 0.5, 1.0)
        target = ReplayBuffer(100, obs_dim=2, priv_dim=1, num_actions=3)

        # Act
        target.load_state_dict(source.state_dict())
        target.end_episode()

        # Assert
        assert len(target) == 6
        assert target.num_episodes == 2

    def test_zero_capacity_is_rejected(self):
        with pytest.raises(ConfigurationError):
            ReplayBuffer(0, obs_dim=1, priv_dim=1, num_actions=2)


class TestExport:
    def test_null_window_gives_a_single_pattern(self):
        config = GridWorldConfig(width=2, height=2, goal=(1, 1), window_radius=0)

        exported = export_tabular(config)

        assert exported.model.num_states == 4
        assert exported.model.num_observations == 1
        np.testing.assert_array_equal(exported.model.O, np.ones((4, 5, 1)))

    def test_goal_is_absorbing_and_free(self, tiny_grid):
        exported = export_tabular(tiny_grid)
        goal = exported.state_index((2, 2))

        np.testing.assert_array_equal(exported.model.P[goal, :, goal], np.ones(5))
        np.testing.assert_array_equal(exported.model.R[goal], np.zeros(5))

    def test_rewards_and_costs_follow_step_semantics(self, tiny_grid):
        exported = export_tabular(tiny_grid)
        origin = exported.state_index((0, 0))
        hazard_neighbour = exported.state_index((1, 0))

        # down from (1, 0) enters the hazard at (1, 1)
        assert exported.model.C[0, hazard_neighbour, 1] == 1.0
        assert exported.model.R[origin, RIGHT] == pytest.approx(tiny_grid.shaping)
        assert exported.model.b0[origin] == 1.0

    def test_noise_free_export_matches_the_simulator(self):
        config = GridWorldConfig(
            width=3, height=3, hazards=[(1, 1)], goal=(2, 2), noise=0.0
        )
        exported = export_tabular(config)

        check = monte_carlo_check(config, exported, 200, np.random.default_rng(0))

        assert check.transition_tv < 0.02
        assert check.observation_tv < 0.02
        assert check.pairs == 8 * 5

    def test_noisy_rows_are_distributions(self, tiny_grid):
        exported = export_tabular(tiny_grid)

        np.testing.assert_allclose(exported.model.O.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(exported.model.O > 0.0)

    def test_exported_model_passes_value_dominance(self, tiny_grid, rng):
        exported = export_tabular(tiny_grid)
        beliefs = witness_beliefs(exported.model.num_states, 50, rng)

        report = verify_value_dominance(exported.model, 2, beliefs, instance_id="grid")

        assert report.violations == 0

    def test_cell_cap_is_enforced(self, tiny_grid):
        with pytest.raises(ConfigurationError, match="free cells"):
            export_tabular(tiny_grid, max_cells=4)

    def test_unknown_pattern_lookup_raises(self, tiny_grid):
        exported = export_tabular(tiny_grid)

        with pytest.raises(KeyError):
            exported.pattern_index(np.full(exported.patterns.shape[1], 0.5))
