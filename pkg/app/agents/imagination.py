"""
File: app/agents/imagination.py
Description: Twisted imagination. Starting from posterior states, the actor
picks a_t from s-_t alone and both latent streams advance on that same
action; the privileged predictors score every imagined step. World-model
parameters are held constant while the rollout is built.
"""

# Standard Library Imports
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import List, Optional

# Third-Party Imports
import numpy as np

# Internal Imports
from app.agents.world_model import LatentState, PIGWorldModel
from app.core import grad as G
from app.core.distributions import CategoricalDistribution
from app.core.errors import ConfigurationError


@dataclass
class ImaginedTrajectory:
    """
    States s_1 .. s_{H+1}, actions a_1 .. a_H; rewards[t] and costs[t] are
    predicted at s_{t+1}. ``critic_inputs`` holds the critic view of every
    state, time-major, shape [(H + 1) * B, critic_dim].
    """

    actor_dists: List[CategoricalDistribution]
    actions: List[G.Tensor]  # H x [B, A]
    rewards: G.Tensor  # [H, B]
    costs: G.Tensor  # [H, B]
    critic_inputs: G.Tensor
    minus: List[LatentState] = field(default_factory=list)
    plus: List[LatentState] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def batch_size(self) -> int:
        return self.rewards.shape[1]


def _stack_features(states: List[LatentState]) -> G.Tensor:
    return G.concat([s.features() for s in states], axis=0)


def twisted_imagination(
    world: PIGWorldModel,
    actor,
    start_minus: LatentState,
    start_plus: Optional[LatentState],
    horizon: int,
    rng: np.random.Generator,
) -> ImaginedTrajectory:
    """
    Roll both latent streams forward ``horizon`` steps from detached start
    states. No oracle posterior s* exists in imagination, since there are no
    embeddings to condition on, so the predictor features take the imagined
    naive state s- in the s* slot: predictor_features(s-, s-, s+).
    """
    if horizon < 1:
        raise ConfigurationError(f"imagination horizon must be >= 1, got {horizon}")
    naive, priv, wiring = world.naive, world.privileged, world.wiring
    if priv is not None and start_plus is None:
        raise ConfigurationError("privileged start states are required")

    with ExitStack() as stack:
        for module in world.modules().values():
            stack.enter_context(module.frozen())

        minus = [start_minus.detach()]
        plus = [start_plus.detach()] if priv is not None else []
        dists, actions = [], []
        for _ in range(horizon):
            dist = actor.distribution(minus[-1].features())
            action = dist.sample(rng).reshape(minus[-1].batch_size, -1)
            dists.append(dist)
            actions.append(action)

            h = naive.dynamics.step(minus[-1], action)
            minus.append(LatentState(h, naive.dynamics.prior(h).sample(rng)))
            if priv is not None:
                h_p = priv.step(plus[-1], action)
                plus.append(LatentState(h_p, priv.dynamics.prior(h_p).sample(rng)))

        B = start_minus.batch_size
        feat_minus = _stack_features(minus)
        # s* has no imagined counterpart; the imagined s- stands in for it
        after_minus = feat_minus[B:]
        if priv is not None:
            feat_plus = _stack_features(plus)
            pred_in = priv.predictor_features(after_minus, after_minus, feat_plus[B:])
            rewards = priv.reward_head(pred_in)
            costs = priv.cost_head(pred_in)
        else:
            rewards = naive.reward_head(after_minus)
            costs = naive.cost_head(after_minus)

        if wiring.critic_uses_priv and priv is not None:
            critic_inputs = G.concat([feat_minus, feat_plus], axis=-1)
        else:
            critic_inputs = feat_minus

    return ImaginedTrajectory(
        actor_dists=dists,
        actions=actions,
        rewards=rewards.reshape(horizon, B),
        costs=costs.reshape(horizon, B),
        critic_inputs=critic_inputs,
        minus=minus,
        plus=plus,
    )
