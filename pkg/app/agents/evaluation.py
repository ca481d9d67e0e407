"""
File: app/agents/evaluation.py
Description: Deployment-time evaluation. Only the naive filter and the actor
run; the privileged model and the privileged channel of the env are never
touched.
"""

# Standard Library Imports
from pathlib import Path
from typing import List, Optional, Union

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.agents.actor_critic import Actor
from app.agents.schemas import EvaluationResult
from app.agents.world_model import PIGWorldModel
from app.envs.gridworld import GridWorld, write_episode_csv


def run_episode(
    env: GridWorld,
    actor: Actor,
    world: PIGWorldModel,
    seed: int,
    rng: np.random.Generator,
    greedy: bool = False,
):
    """Undiscounted (return, cost) of one episode."""
    obs, _, _ = env.reset(seed=seed)
    state = world.filter_step(None, None, obs, rng)
    episode_return = episode_cost = 0.0
    while True:
        action = actor.act(state.features(), rng, greedy=greedy)
        result = env.step(action)
        episode_return += result.reward
        episode_cost += result.cost
        if result.done:
            return episode_return, episode_cost
        state = world.filter_step(state, action, result.observation, rng)


def evaluate(
    env: GridWorld,
    actor: Actor,
    world: PIGWorldModel,
    episodes: int,
    seed: int = 0,
    greedy: bool = False,
    log_dir: Optional[Union[str, Path]] = None,
) -> EvaluationResult:
    """
    Runs ``episodes`` episodes and averages the undiscounted reward and cost
    sums. Episode k resets the env with a seed drawn from ``seed``, so two
    calls with the same arguments see the same start cells and noise.
    """
    seeds = np.random.SeedSequence(seed).generate_state(episodes)
    rng = np.random.default_rng(np.random.SeedSequence([seed, episodes]))
    if log_dir is not None:
        env.record_episode = True

    returns: List[float] = []
    costs: List[float] = []
    for index, episode_seed in enumerate(seeds):
        episode_return, episode_cost = run_episode(
            env, actor, world, int(episode_seed), rng, greedy=greedy
        )
        returns.append(episode_return)
        costs.append(episode_cost)
        if log_dir is not None:
            write_episode_csv(env.episode_log, Path(log_dir) / f"episode_{index:03d}.csv")
        logger.debug(
            f"Eval episode {index}: return={episode_return:.3f} cost={episode_cost:.3f}"
        )

    result = EvaluationResult(
        mean_return=float(np.mean(returns)),
        mean_cost=float(np.mean(costs)),
        returns=returns,
        costs=costs,
    )
    logger.info(
        f"Evaluated {episodes} episodes: J={result.mean_return:.3f} "
        f"Jc={result.mean_cost:.3f}"
    )
    return result
