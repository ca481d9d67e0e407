"""
File: tests/test_actor_critic.py
Description: Tests for the behaviour learner: critic targets, the actor
objective under each gradient estimator, the multiplier feed, gradient
isolation of frozen modules, and a constrained two-armed bandit that must
end on the safe arm.
"""

# Third-Party Imports
import numpy as np
import pytest

# Internal Imports
from app.agents.actor_critic import ActorCritic, Critic, critic_loss
from app.agents.imagination import ImaginedTrajectory
from app.agents.lagrangian import AugmentedLagrangian
from app.core import grad as G
from app.core.config import ActorCriticConfig
from app.core.nn import Linear
from app.core.optim import OptimizerConfig
from app.solver.mdp import greedy_actions, scalarized_value_iteration
from app.solver.tabular import TabularCPOMDP

# risky arm first: r=1, c=1; safe arm: r=0.5, c=0
REWARD_ARMS = (1.0, 0.5)
COST_ARMS = (1.0, 0.0)


def make_agent(rng, budget_per_step: float = 0.0, **overrides) -> ActorCritic:
    settings = dict(
        horizon=1,
        hidden=8,
        gamma=0.0,
        entropy=0.0,
        actor_optimizer=OptimizerConfig(lr=0.01, clip_norm=None),
        critic_optimizer=OptimizerConfig(lr=0.01),
    )
    settings.update(overrides)
    return ActorCritic(1, 1, 2, ActorCriticConfig(**settings), budget_per_step, rng)


def bandit_trajectory(
    agent: ActorCritic,
    rng,
    batch: int = 16,
    reward_arms=REWARD_ARMS,
    cost_arms=COST_ARMS,
    extra_reward=None,
) -> ImaginedTrajectory:
    """One imagined step from a constant state; rewards follow the sampled arm."""
    dist = agent.actor.distribution(np.ones((batch, 1)))
    action = dist.sample(rng).reshape(batch, 2)
    rewards = (action * np.asarray(reward_arms)).sum(axis=-1)
    if extra_reward is not None:
        rewards = rewards + extra_reward
    costs = (action * np.asarray(cost_arms)).sum(axis=-1)
    return ImaginedTrajectory(
        actor_dists=[dist],
        actions=[action],
        rewards=rewards.reshape(1, batch),
        costs=costs.reshape(1, batch),
        critic_inputs=G.as_tensor(np.ones((2 * batch, 1))),
    )


def safe_arm_probability(agent: ActorCritic) -> float:
    return float(agent.actor.distribution(np.ones((1, 1))).probs.data[0, 0, 1])


class TestCritic:
    def test_targets_equal_to_values_cost_nothing(self, rng):
        critic = Critic(3, 8, rng)
        critic.net.layers[-1].p_bias.data = np.array([0.7])
        inputs = rng.normal(size=(5, 3))

        loss = critic_loss(critic, inputs, critic(inputs).data)

        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_fresh_critic_predicts_zero(self, rng):
        critic = Critic(4, 8, rng)

        np.testing.assert_array_equal(critic(rng.normal(size=(3, 4))).data, np.zeros(3))


class TestActorCriticUpdate:
    @pytest.mark.parametrize(
        "measured, expected_multiplier", [(None, 0.75), (0.3, 0.3)]
    )
    def test_measured_signal_feeds_only_the_multiplier(
        self, rng, measured, expected_multiplier
    ):
        # Arrange: every imagined step costs 1 against a budget of 0.25 per step
        agent = make_agent(rng, budget_per_step=0.25)
        controller = AugmentedLagrangian(lambda_init=0.0, mu_init=1.0, nu=0.0)
        trajectory = bandit_trajectory(agent, rng, cost_arms=(1.0, 1.0))

        # Act
        losses = agent.update(trajectory, controller, measured_violation=measured)

        # Assert
        assert losses.violation == pytest.approx(0.75)
        assert controller.multiplier == pytest.approx(expected_multiplier)
        assert losses.lagrange_multiplier == controller.multiplier

    @pytest.mark.parametrize("freeze", [True, False], ids=["frozen", "live"])
    def test_frozen_modules_receive_no_gradient(self, rng, freeze):
        # Arrange: a stand-in world head sits inside the imagined reward
        agent = make_agent(rng)
        world = Linear(1, 1, rng)
        before = world.state_dict()
        offset = world(G.as_tensor(np.ones((16, 1)))).reshape(16)
        trajectory = bandit_trajectory(agent, rng, extra_reward=offset)
        frozen = (world,) if freeze else ()

        # Act
        agent.update(trajectory, AugmentedLagrangian(0.01, 1e-6, 0.0), frozen=frozen)

        # Assert
        if freeze:
            assert all(p.grad is None for p in world.parameters())
        else:
            assert world.p_weight.grad is not None
        assert all(p.requires_grad for p in world.parameters())
        for name, value in world.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_slow_critics_follow_by_ema_only(self, rng):
        agent = make_agent(rng)
        slow_before = agent.slow_reward.state_dict()

        agent.update(bandit_trajectory(agent, rng), AugmentedLagrangian(0.01, 1e-6, 0.0))

        tau = agent.config.slow_critic_tau
        online = agent.critic_reward.state_dict()
        for name, value in agent.slow_reward.state_dict().items():
            np.testing.assert_allclose(
                value, (1.0 - tau) * slow_before[name] + tau * online[name]
            )

    def test_non_finite_losses_skip_the_update(self, rng):
        # Arrange
        agent = make_agent(rng)
        controller = AugmentedLagrangian(0.2, 1.0, 0.0)
        actor_before = agent.actor.state_dict()

        # Act
        losses = agent.update(
            bandit_trajectory(agent, rng, reward_arms=(np.nan, np.nan)), controller
        )

        # Assert
        assert losses.skipped
        assert agent.skipped_updates == 1 and agent.updates == 0
        assert controller.multiplier == 0.2
        for name, value in agent.actor.state_dict().items():
            np.testing.assert_array_equal(value, actor_before[name])

    @pytest.mark.parametrize("literal, grows", [(False, True), (True, False)])
    def test_entropy_bonus_direction(self, rng, literal, grows):
        # Arrange: a confident actor and no reward signal at all
        agent = make_agent(
            rng,
            entropy=1.0,
            entropy_literal_sign=literal,
            actor_optimizer=OptimizerConfig(lr=0.02, clip_norm=None),
        )
        agent.actor.net.layers[-1].p_weight.data[:] = 0.0
        agent.actor.net.layers[-1].p_bias.data = np.array([1.0, -1.0])
        controller = AugmentedLagrangian(0.0, 1e-6, 0.0)
        start = agent.update(
            bandit_trajectory(agent, rng, reward_arms=(0.0, 0.0), cost_arms=(0.0, 0.0)),
            controller,
        ).entropy

        # Act
        for _ in range(40):
            last = agent.update(
                bandit_trajectory(
                    agent, rng, reward_arms=(0.0, 0.0), cost_arms=(0.0, 0.0)
                ),
                controller,
            ).entropy

        # Assert
        assert (last > start) == grows

    def test_entropy_bonus_alone_reaches_the_uniform_policy(self, rng):
        agent = make_agent(
            rng, entropy=1.0, actor_optimizer=OptimizerConfig(lr=0.01, clip_norm=None)
        )
        agent.actor.net.layers[-1].p_weight.data[:] = 0.0
        agent.actor.net.layers[-1].p_bias.data = np.array([3.0, -3.0])
        controller = AugmentedLagrangian(0.0, 1e-6, 0.0)

        for _ in range(1000):
            agent.update(
                bandit_trajectory(
                    agent, rng, batch=8, reward_arms=(0.0, 0.0), cost_arms=(0.0, 0.0)
                ),
                controller,
            )

        assert safe_arm_probability(agent) == pytest.approx(0.5, abs=0.05)

    def test_score_function_estimator_updates_the_actor(self, rng):
        agent = make_agent(rng, gradient="reinforce")
        before = agent.actor.state_dict()

        losses = agent.update(bandit_trajectory(agent, rng), AugmentedLagrangian(0.5, 1.0, 0.0))

        assert not losses.skipped
        assert np.isfinite(losses.actor)
        after = agent.actor.state_dict()
        assert any(not np.array_equal(before[k], after[k]) for k in after)

    def test_state_dict_round_trip(self, rng):
        source = make_agent(np.random.default_rng(1))
        source.update(bandit_trajectory(source, rng), AugmentedLagrangian(0.01, 1e-6, 0.0))
        target = make_agent(np.random.default_rng(2))

        target.load_state_dict(source.state_dict())

        assert target.updates == source.updates == 1
        assert safe_arm_probability(target) == safe_arm_probability(source)
        assert target.actor_optimizer.steps == source.actor_optimizer.steps


class TestConstrainedBandit:
    @staticmethod
    def bandit_model() -> TabularCPOMDP:
        return TabularCPOMDP(
            P=np.ones((1, 2, 1)),
            O=np.ones((1, 2, 1)),
            R=np.array([REWARD_ARMS]),
            C=np.array([[COST_ARMS]]),
            budgets=np.array([0.0]),
            gamma=0.5,
            b0=np.array([1.0]),
        )

    @pytest.mark.slow
    def test_zero_budget_converges_to_the_safe_arm(self):
        # Arrange
        rng = np.random.default_rng(0)
        agent = make_agent(rng)
        controller = AugmentedLagrangian(lambda_init=0.0, mu_init=0.05, nu=0.0)

        # Act
        for _ in range(3000):
            agent.update(bandit_trajectory(agent, rng, batch=64), controller)
            if safe_arm_probability(agent) > 0.95:
                break

        # Assert: the learned multiplier sits past the 0.5 switch point
        assert safe_arm_probability(agent) > 0.95
        multiplier = controller.multiplier
        assert multiplier >= 0.5
        model = self.bandit_model()
        values = scalarized_value_iteration(model, [multiplier], 1)
        assert greedy_actions(model, values, 0, [multiplier])[0] == 1
