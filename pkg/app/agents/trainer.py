"""
File: app/agents/trainer.py
Description: Training orchestration. Collects gridworld experience, trains
both world models on replayed windows, improves the actor and critics in
twisted imagination under the constraint controller, evaluates on a fixed
schedule and persists metrics and checkpoints.

The loop is single-threaded; with record_wall_time disabled every artifact
is a function of the config (hash) alone.
"""

# Standard Library Imports
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Deque, Dict, Optional, Union

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.agents.actor_critic import ActorCritic
from app.agents.evaluation import evaluate
from app.agents.imagination import twisted_imagination
from app.agents.lagrangian import LagrangeController, build_controller
from app.agents.schemas import BehaviourLosses, EvaluationResult, MetricsRow, WorldLosses
from app.agents.world_model import LatentState, PIGWorldModel, Wiring
from app.core import grad as G
from app.core.config import RunConfig
from app.core.errors import ReplayNotReady
from app.envs.gridworld import NUM_ACTIONS, GridWorld
from app.envs.replay import ReplayBuffer
from app.utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from app.utils.metrics import MetricsWriter

CHECKPOINT_NAME = "checkpoint.pig"
METRICS_NAME = "metrics.csv"
RNG_STREAMS = ("init", "world", "behaviour", "collect")


def apply_ablation(config: RunConfig) -> Wiring:
    """Component wiring for the configured variant; conflicting flags raise."""
    variant = config.ablation.variant
    if variant == "no_align":
        return Wiring(variant=variant, align=False)
    if variant == "unprivileged":
        return Wiring(
            variant=variant,
            privileged=False,
            align=False,
            decode_from_star=False,
            naive_decodes_priv=False,
            naive_heads=True,
            critic_uses_priv=False,
        )
    if variant == "informed_style":
        return Wiring(
            variant=variant,
            privileged=False,
            align=False,
            decode_from_star=False,
            naive_decodes_priv=True,
            naive_heads=True,
            critic_uses_priv=False,
        )
    return Wiring()


def budget_per_step(config: RunConfig) -> float:
    """Per-episode budget pro-rated to one imagined step."""
    env = config.env
    return env.budget * env.action_repeat / env.max_steps


@dataclass
class TrainingArtifacts:
    run_dir: Path
    metrics_path: Path
    checkpoint_path: Path
    env_steps: int
    evaluations: int


class PIGAgent:
    """Owns every stateful piece of a run, so it can be checkpointed as one."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.config_hash = config.config_hash()
        self.wiring = apply_ablation(config)
        streams = np.random.SeedSequence(config.seed).spawn(len(RNG_STREAMS))
        self.rngs: Dict[str, np.random.Generator] = {
            name: np.random.default_rng(seq) for name, seq in zip(RNG_STREAMS, streams)
        }

        env_cfg = config.env
        self.env = GridWorld(env_cfg)
        self.eval_env = GridWorld(env_cfg)
        self.replay = ReplayBuffer(
            config.training.replay_capacity,
            env_cfg.observation_dim,
            env_cfg.privileged_dim,
            NUM_ACTIONS,
        )
        init = self.rngs["init"]
        self.world = PIGWorldModel(
            env_cfg.observation_dim,
            env_cfg.privileged_dim,
            NUM_ACTIONS,
            config.model,
            config.loss,
            config.training,
            self.wiring,
            init,
        )
        feature_dim = self.world.naive.feature_dim
        critic_dim = feature_dim
        if self.wiring.critic_uses_priv and self.wiring.privileged:
            critic_dim = 2 * feature_dim
        self.behaviour = ActorCritic(
            feature_dim,
            critic_dim,
            NUM_ACTIONS,
            config.actor_critic,
            budget_per_step(config),
            init,
        )
        self.controller: LagrangeController = build_controller(config.constraint)

        self.env_step = 0
        self.evaluations = 0
        self.train_credit = 0.0
        self.needs_reset = True
        self.filter_state: Optional[LatentState] = None
        self.episode_costs: Deque[float] = deque(maxlen=config.constraint.measured_window)
        self.world_losses: Optional[WorldLosses] = None
        self.behaviour_losses: Optional[BehaviourLosses] = None
        self.elapsed = 0.0

    # --- collection ------------------------------------------------------------

    @property
    def stores_privileged(self) -> bool:
        return self.wiring.privileged or self.wiring.naive_decodes_priv

    def _privileged(self, result) -> np.ndarray:
        if not self.stores_privileged:
            return np.zeros(self.config.env.privileged_dim)
        return result.privileged

    def collect_step(self) -> None:
        """One agent step in the training env; episodes are committed when they end."""
        rng = self.rngs["collect"]
        if self.needs_reset:
            seed = int(rng.integers(2**31)) if self.env.state is None else None
            obs, first, _ = self.env.reset(seed=seed)
            self.replay.add_step(obs, self._privileged(first), None, 0.0, 0.0)
            self.filter_state = self.world.filter_step(None, None, obs, rng)
            self.needs_reset = False

        if self.env_step < self.config.training.prefill_steps:
            action = int(rng.integers(NUM_ACTIONS))
        else:
            action = self.behaviour.actor.act(self.filter_state.features(), rng)
        result = self.env.step(action)
        self.replay.add_step(
            result.observation,
            self._privileged(result),
            action,
            result.reward,
            result.cost,
            result.terminal,
        )
        self.env_step += self.config.env.action_repeat
        if result.done:
            self.replay.end_episode()
            self.episode_costs.append(self.env.state.episode_cost)
            self.needs_reset = True
            self.filter_state = None
        else:
            self.filter_state = self.world.filter_step(
                self.filter_state, action, result.observation, rng
            )

    # --- training --------------------------------------------------------------

    def measured_violation(self) -> Optional[float]:
        cfg = self.config
        if cfg.constraint.signal != "measured" or not self.episode_costs:
            return None
        scale = cfg.actor_critic.horizon * cfg.env.action_repeat / cfg.env.max_steps
        return (float(np.mean(self.episode_costs)) - cfg.env.budget) * scale

    def train_step(self) -> bool:
        """World step, then one behaviour step on imagination from its posteriors."""
        cfg = self.config.training
        try:
            batch = self.replay.sample_batch(
                cfg.batch_size, cfg.batch_length, self.rngs["world"]
            )
        except ReplayNotReady as exc:
            logger.debug(f"Training deferred: {exc}")
            return False

        self.world_losses = self.world.world_train_step(batch, self.rngs["world"])
        rng = self.rngs["behaviour"]
        start_minus, start_plus = self.world.rollout_posterior(batch, rng).starts()
        trajectory = twisted_imagination(
            self.world,
            self.behaviour.actor,
            start_minus,
            start_plus,
            self.config.actor_critic.horizon,
            rng,
        )
        self.behaviour_losses = self.behaviour.update(
            trajectory,
            self.controller,
            measured_violation=self.measured_violation(),
            frozen=list(self.world.modules().values()),
        )
        return True

    def updates_due(self) -> int:
        """Whole updates earned since the last call under train_ratio."""
        cfg = self.config.training
        if self.env_step < cfg.prefill_steps:
            return 0
        self.train_credit += cfg.train_ratio / (cfg.batch_size * cfg.batch_length)
        due = int(self.train_credit)
        self.train_credit -= due
        return due

    # --- evaluation and metrics -----------------------------------------------

    def evaluate(self) -> EvaluationResult:
        seed = int(
            np.random.SeedSequence([self.config.seed, self.evaluations]).generate_state(1)[0]
        )
        result = evaluate(
            self.eval_env,
            self.behaviour.actor,
            self.world,
            self.config.training.eval_episodes,
            seed=seed,
        )
        self.evaluations += 1
        return result

    def metrics_row(self, result: EvaluationResult) -> MetricsRow:
        world = self.world_losses
        behaviour = self.behaviour_losses
        return MetricsRow(
            env_step=self.env_step,
            wall_time=self.elapsed if self.config.training.record_wall_time else 0.0,
            return_=result.mean_return,
            cost_return=result.mean_cost,
            loss_dyn=world.dyn if world else 0.0,
            loss_align=world.align if world else 0.0,
            loss_dec=world.dec if world else 0.0,
            loss_pred=world.pred if world else 0.0,
            loss_actor=behaviour.actor if behaviour else 0.0,
            loss_critic_reward=behaviour.critic_reward if behaviour else 0.0,
            loss_critic_cost=behaviour.critic_cost if behaviour else 0.0,
            lagrange_multiplier=self.controller.multiplier,
            penalty_coefficient=self.controller.penalty_coefficient,
            entropy=behaviour.entropy if behaviour else 0.0,
            kl_align=world.kl_align if world else 0.0,
        )

    # --- persistence -----------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        arrays: Dict[str, np.ndarray] = {}
        sources = {
            "world": self.world.state_dict(),
            "world_optim": self.world.optimizer.state_dict(),
            "behaviour": self.behaviour.state_dict(),
            "replay": self.replay.state_dict(),
        }
        for prefix, state in sources.items():
            for name, value in state.items():
                arrays[f"{prefix}.{name}"] = np.asarray(value, dtype=np.float64)
        if self.filter_state is not None:
            arrays["filter.h"] = self.filter_state.h.data
            arrays["filter.z"] = self.filter_state.z.data

        state: Dict[str, Any] = {
            "config": self.config.model_dump(mode="json"),
            "rngs": {name: rng.bit_generator.state for name, rng in self.rngs.items()},
            "env": self.env.get_state(),
            "controller": self.controller.state_dict(),
            "env_step": self.env_step,
            "evaluations": self.evaluations,
            "train_credit": self.train_credit,
            "needs_reset": self.needs_reset,
            "episode_costs": list(self.episode_costs),
            "world_losses": self.world_losses.model_dump() if self.world_losses else None,
            "behaviour_losses": (
                self.behaviour_losses.model_dump() if self.behaviour_losses else None
            ),
            "world_counters": [self.world.updates, self.world.skipped_updates],
            "elapsed": self.elapsed,
        }
        return Checkpoint(arrays=arrays, state=state, config_hash=self.config_hash)

    def load_checkpoint(self, checkpoint: Checkpoint) -> None:
        arrays, state = checkpoint.arrays, checkpoint.state

        def section(prefix: str) -> Dict[str, np.ndarray]:
            head = f"{prefix}."
            return {k[len(head):]: v for k, v in arrays.items() if k.startswith(head)}

        self.world.load_state_dict(section("world"))
        self.world.optimizer.load_state_dict(section("world_optim"))
        self.behaviour.load_state_dict(section("behaviour"))
        self.replay.load_state_dict(section("replay"))
        self.filter_state = (
            LatentState(G.Tensor(arrays["filter.h"]), G.Tensor(arrays["filter.z"]))
            if "filter.h" in arrays
            else None
        )
        for name, rng in self.rngs.items():
            rng.bit_generator.state = state["rngs"][name]
        self.env.set_state(state["env"])
        self.controller.load_state_dict(state["controller"])
        self.env_step = int(state["env_step"])
        self.evaluations = int(state["evaluations"])
        self.train_credit = float(state["train_credit"])
        self.needs_reset = bool(state["needs_reset"])
        self.episode_costs.clear()
        self.episode_costs.extend(state["episode_costs"])
        self.world_losses = (
            WorldLosses(**state["world_losses"]) if state["world_losses"] else None
        )
        self.behaviour_losses = (
            BehaviourLosses(**state["behaviour_losses"])
            if state["behaviour_losses"]
            else None
        )
        self.world.updates, self.world.skipped_updates = state["world_counters"]
        self.elapsed = float(state["elapsed"])

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path]) -> "PIGAgent":
        """Rebuilds the agent from the config stored inside the checkpoint."""
        checkpoint = load_checkpoint(path)
        agent = cls(RunConfig.model_validate(checkpoint.state["config"]))
        if agent.config_hash != checkpoint.config_hash:
            logger.warning("Stored config does not reproduce the checkpoint hash")
        agent.load_checkpoint(checkpoint)
        return agent


def train(
    config: RunConfig,
    run_dir: Union[str, Path],
    resume_from: Optional[Union[str, Path]] = None,
) -> TrainingArtifacts:
    """
    Runs until ``training.total_env_steps``. Metrics get a row at step 0 and
    after every ``eval_interval`` env steps; the final checkpoint is always
    written, intermediate ones every ``checkpoint_interval`` steps.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = config.training
    agent = PIGAgent(config)
    metrics = MetricsWriter(run_dir / METRICS_NAME)
    checkpoint_path = run_dir / CHECKPOINT_NAME

    if resume_from is not None:
        agent.load_checkpoint(load_checkpoint(resume_from, expected_hash=agent.config_hash))
        metrics.truncate_after(agent.env_step)
        logger.info(f"Resumed {config.name} at env step {agent.env_step}")
    else:
        logger.info(
            f"Training {config.name} ({agent.wiring.variant}, seed {config.seed}, "
            f"hash {agent.config_hash[:12]})"
        )

    started = time.perf_counter() - agent.elapsed
    next_eval = (agent.env_step // cfg.eval_interval + 1) * cfg.eval_interval
    next_checkpoint = (
        (agent.env_step // cfg.checkpoint_interval + 1) * cfg.checkpoint_interval
        if cfg.checkpoint_interval
        else None
    )
    try:
        if agent.evaluations == 0:
            metrics.append(agent.metrics_row(agent.evaluate()))

        while agent.env_step < cfg.total_env_steps:
            agent.collect_step()
            for _ in range(agent.updates_due()):
                agent.train_step()
            agent.elapsed = time.perf_counter() - started

            if agent.env_step >= next_eval or agent.env_step >= cfg.total_env_steps:
                metrics.append(agent.metrics_row(agent.evaluate()))
                row = agent.behaviour_losses
                logger.info(
                    f"step {agent.env_step}: lambda={agent.controller.multiplier:.4f}"
                    + (f" entropy={row.entropy:.3f}" if row else "")
                )
                while next_eval <= agent.env_step:
                    next_eval += cfg.eval_interval
            if next_checkpoint is not None and agent.env_step >= next_checkpoint:
                save_checkpoint(
                    agent.to_checkpoint(),
                    run_dir / f"checkpoint_{agent.env_step:08d}.pig",
                )
                while next_checkpoint <= agent.env_step:
                    next_checkpoint += cfg.checkpoint_interval
    except Exception as exc:
        logger.error(f"Training aborted at env step {agent.env_step}: {exc}")
        save_checkpoint(agent.to_checkpoint(), run_dir / "checkpoint_aborted.pig")
        raise

    save_checkpoint(agent.to_checkpoint(), checkpoint_path)
    logger.success(
        f"Training finished: {agent.env_step} env steps, "
        f"{agent.world.updates} world updates, {agent.behaviour.updates} behaviour updates"
    )
    return TrainingArtifacts(
        run_dir=run_dir,
        metrics_path=metrics.path,
        checkpoint_path=checkpoint_path,
        env_steps=agent.env_step,
        evaluations=agent.evaluations,
    )
