"""
File: app/agents/actor_critic.py
Description: Actor over s- only, reward and cost critics over the
asymmetric (s-, s+) view with slow EMA copies, and the behaviour update on an
imagined trajectory under a constraint controller.
"""

# Standard Library Imports
from contextlib import ExitStack
from typing import Dict, Optional, Sequence

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.agents.imagination import ImaginedTrajectory
from app.agents.lagrangian import LagrangeController
from app.agents.returns import td_lambda
from app.agents.schemas import BehaviourLosses
from app.core import grad as G
from app.core.config import ActorCriticConfig
from app.core.distributions import CategoricalDistribution
from app.core.nn import MLP, Module
from app.core.optim import Adam


class Actor(Module):
    """pi(a | s-); the only input is the naive latent feature vector."""

    def __init__(
        self, feature_dim: int, num_actions: int, hidden: int, rng: np.random.Generator
    ):
        self.feature_dim = feature_dim
        self.num_actions = num_actions
        self.net = MLP([feature_dim, hidden, num_actions], rng)

    def distribution(self, minus_features) -> CategoricalDistribution:
        logits = self.net(G.as_tensor(minus_features))
        return CategoricalDistribution(logits.reshape(logits.shape[0], 1, self.num_actions))

    def act(self, minus_features, rng: np.random.Generator, greedy: bool = False) -> int:
        with G.no_grad():
            dist = self.distribution(minus_features)
            one_hot = dist.mode() if greedy else dist.sample(rng)
        return int(one_hot.data.reshape(-1, self.num_actions)[0].argmax())


class Critic(Module):
    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.net = MLP([input_dim, hidden, 1], rng, output_scale=0.0)

    def __call__(self, inputs) -> G.Tensor:
        out = self.net(G.as_tensor(inputs))
        return out.reshape(out.shape[0])


def critic_loss(critic: Critic, inputs, targets) -> G.Tensor:
    """Mean 0.5 * (v - sg(target))^2."""
    values = critic(G.stop_gradient(G.as_tensor(inputs)))
    return (0.5 * G.square(values - G.stop_gradient(G.as_tensor(targets)))).mean()


class ActorCritic:
    """Actor, both critics and their slow copies, each with its own optimizer."""

    def __init__(
        self,
        feature_dim: int,
        critic_dim: int,
        num_actions: int,
        config: ActorCriticConfig,
        budget_per_step: float,
        rng: np.random.Generator,
    ):
        self.config = config
        self.budget_per_step = budget_per_step
        self.actor = Actor(feature_dim, num_actions, config.hidden, rng)
        self.critic_reward = Critic(critic_dim, config.hidden, rng)
        self.critic_cost = Critic(critic_dim, config.hidden, rng)
        self.slow_reward = Critic(critic_dim, config.hidden, rng)
        self.slow_cost = Critic(critic_dim, config.hidden, rng)
        self.slow_reward.load_state_dict(self.critic_reward.state_dict())
        self.slow_cost.load_state_dict(self.critic_cost.state_dict())
        self.actor_optimizer = Adam(
            self.actor.parameters(), config.actor_optimizer, name="actor"
        )
        self.reward_optimizer = Adam(
            self.critic_reward.parameters(), config.critic_optimizer, name="critic_reward"
        )
        self.cost_optimizer = Adam(
            self.critic_cost.parameters(), config.critic_optimizer, name="critic_cost"
        )
        self.updates = 0
        self.skipped_updates = 0

    def modules(self) -> Dict[str, Module]:
        return {
            "actor": self.actor,
            "critic_reward": self.critic_reward,
            "critic_cost": self.critic_cost,
            "slow_reward": self.slow_reward,
            "slow_cost": self.slow_cost,
        }

    def optimizers(self) -> Dict[str, Adam]:
        return {
            "actor": self.actor_optimizer,
            "critic_reward": self.reward_optimizer,
            "critic_cost": self.cost_optimizer,
        }

    def targets(self, trajectory: ImaginedTrajectory):
        """TD(lambda) return and cost targets over the first H states; [H, B] each."""
        cfg = self.config
        H, B = trajectory.horizon, trajectory.batch_size
        with ExitStack() as stack:
            stack.enter_context(self.slow_reward.frozen())
            stack.enter_context(self.slow_cost.frozen())
            v_reward = self.slow_reward(trajectory.critic_inputs).reshape(H + 1, B)
            v_cost = self.slow_cost(trajectory.critic_inputs).reshape(H + 1, B)
        pad = np.zeros((1, B))
        reward_signal = G.concat([trajectory.rewards, pad], axis=0)
        cost_signal = G.concat([trajectory.costs, pad], axis=0)
        returns = td_lambda(v_reward, reward_signal, cfg.gamma, cfg.lambda_reward)[:H]
        cost_returns = td_lambda(v_cost, cost_signal, cfg.gamma, cfg.lambda_cost)[:H]
        return returns, cost_returns, v_reward[:H], v_cost[:H]

    def violation(self, cost_returns: G.Tensor, horizon: int) -> G.Tensor:
        """mean C^lambda minus the budget pro-rated to the imagination horizon."""
        return cost_returns.mean() - self.budget_per_step * horizon

    def actor_loss(
        self,
        trajectory: ImaginedTrajectory,
        controller: LagrangeController,
        returns: G.Tensor,
        cost_returns: G.Tensor,
        v_reward: G.Tensor,
        v_cost: G.Tensor,
    ):
        """Actor objective under the configured gradient estimator; (loss, entropy, delta)."""
        cfg = self.config
        entropy = G.concat(
            [d.entropy().reshape(1, -1) for d in trajectory.actor_dists], axis=0
        ).mean()
        delta = self.violation(cost_returns, trajectory.horizon)

        if cfg.gradient == "reinforce":
            log_probs = G.concat(
                [
                    d.log_prob(G.stop_gradient(a).reshape(a.shape[0], 1, -1)).reshape(1, -1)
                    for d, a in zip(trajectory.actor_dists, trajectory.actions)
                ],
                axis=0,
            )
            advantage = G.stop_gradient(returns - v_reward)
            cost_advantage = G.stop_gradient(cost_returns - v_cost)
            slope = controller.penalty_slope(delta.item())
            objective = (advantage * log_probs).mean()
            penalty = slope * (cost_advantage * log_probs).mean()
        else:
            objective = returns.mean()
            penalty = controller.penalty(delta)

        entropy_term = cfg.entropy * entropy
        if cfg.entropy_literal_sign:
            loss = -objective + entropy_term + penalty
        else:
            loss = -objective - entropy_term + penalty
        return loss, entropy, delta

    def update(
        self,
        trajectory: ImaginedTrajectory,
        controller: LagrangeController,
        measured_violation: Optional[float] = None,
        frozen: Sequence[Module] = (),
    ) -> BehaviourLosses:
        """
        One actor step, one step per critic, slow-critic EMA, then one
        multiplier update. ``measured_violation`` replaces the imagined one
        in the multiplier update only. Modules in ``frozen`` (the world
        model) receive no gradient.
        """
        cfg = self.config
        H, B = trajectory.horizon, trajectory.batch_size
        with ExitStack() as stack:
            for module in (*frozen, self.slow_reward, self.slow_cost):
                stack.enter_context(module.frozen())

            returns, cost_returns, v_reward, v_cost = self.targets(trajectory)
            actor_loss, entropy, delta = self.actor_loss(
                trajectory, controller, returns, cost_returns, v_reward, v_cost
            )
            states = trajectory.critic_inputs.data[: H * B]
            value_reward = critic_loss(self.critic_reward, states, returns.data.reshape(-1))
            value_cost = critic_loss(self.critic_cost, states, cost_returns.data.reshape(-1))

            losses = (actor_loss.item(), value_reward.item(), value_cost.item())
            if not all(np.isfinite(losses)):
                self.skipped_updates += 1
                logger.warning(f"Behaviour losses {losses} not finite; update skipped")
                return BehaviourLosses(
                    actor=losses[0],
                    critic_reward=0.0,
                    critic_cost=0.0,
                    entropy=entropy.item(),
                    violation=delta.item(),
                    lagrange_multiplier=controller.multiplier,
                    penalty_coefficient=controller.penalty_coefficient,
                    skipped=True,
                )

            for optimizer, loss in (
                (self.actor_optimizer, actor_loss),
                (self.reward_optimizer, value_reward),
                (self.cost_optimizer, value_cost),
            ):
                optimizer.zero_grad()
                G.backward(loss)
                optimizer.step()

        self.slow_reward.ema_from(self.critic_reward, cfg.slow_critic_tau)
        self.slow_cost.ema_from(self.critic_cost, cfg.slow_critic_tau)
        signal = delta.item() if measured_violation is None else measured_violation
        controller.update(signal)
        self.updates += 1
        return BehaviourLosses(
            actor=losses[0],
            critic_reward=losses[1],
            critic_cost=losses[2],
            entropy=entropy.item(),
            violation=delta.item(),
            lagrange_multiplier=controller.multiplier,
            penalty_coefficient=controller.penalty_coefficient,
        )

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = {}
        for prefix, module in self.modules().items():
            for name, value in module.state_dict().items():
                state[f"{prefix}.{name}"] = value
        for prefix, optimizer in self.optimizers().items():
            for name, value in optimizer.state_dict().items():
                state[f"optim.{prefix}.{name}"] = value
        state["counters"] = np.array([self.updates, self.skipped_updates], dtype=np.float64)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for prefix, module in self.modules().items():
            module.load_state_dict(_strip(state, f"{prefix}."))
        for prefix, optimizer in self.optimizers().items():
            optimizer.load_state_dict(_strip(state, f"optim.{prefix}."))
        self.updates, self.skipped_updates = (int(v) for v in state["counters"])


def _strip(state: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
