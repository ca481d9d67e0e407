"""
File: app/envs/replay.py
Description: Episode replay buffer. Committed episodes are laid end to end
in one stream with ``is_first`` marking every episode start; training windows
of length T are drawn uniformly from that stream.
"""

# Standard Library Imports
import threading
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.core.errors import ConfigurationError, ReplayNotReady

FIELDS = ("obs", "priv", "action", "reward", "cost", "is_first", "is_terminal")


@dataclass(eq=False)
class SequenceBatch:
    """
    B windows of T steps. ``action`` at step t is the one-hot action that led
    into step t (zeros at an episode start); reward and cost are what that
    action earned.
    """

    obs: np.ndarray  # [B, T, obs_dim]
    priv: np.ndarray  # [B, T, priv_dim]
    action: np.ndarray  # [B, T, num_actions]
    reward: np.ndarray  # [B, T]
    cost: np.ndarray  # [B, T]
    is_first: np.ndarray  # [B, T]
    is_terminal: np.ndarray  # [B, T]
    starts: np.ndarray  # [B] stream index of each window

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]

    @property
    def length(self) -> int:
        return self.obs.shape[1]


class ReplayBuffer:
    """
    Ring of episodes bounded by total steps. One writer appends steps and
    commits episodes; readers sample from a snapshot taken under the lock.
    """

    def __init__(
        self, capacity: int, obs_dim: int, priv_dim: int, num_actions: int
    ):
        if capacity < 1:
            raise ConfigurationError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.priv_dim = priv_dim
        self.num_actions = num_actions
        self._episodes: Deque[Dict[str, np.ndarray]] = deque()
        self._pending: Dict[str, List] = {name: [] for name in FIELDS}
        self._stream: Optional[Dict[str, np.ndarray]] = None
        self._steps = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        """Committed steps."""
        return self._steps

    @property
    def num_episodes(self) -> int:
        return len(self._episodes)

    def add_step(
        self,
        obs: np.ndarray,
        priv: np.ndarray,
        action: Optional[int],
        reward: float,
        cost: float,
        is_terminal: bool = False,
    ) -> None:
        """Append to the open episode; ``action`` is None for the first step."""
        one_hot = np.zeros(self.num_actions)
        if action is not None:
            one_hot[action] = 1.0
        pending = self._pending
        pending["obs"].append(np.asarray(obs, dtype=np.float64))
        pending["priv"].append(np.asarray(priv, dtype=np.float64))
        pending["action"].append(one_hot)
        pending["reward"].append(float(reward))
        pending["cost"].append(float(cost))
        pending["is_first"].append(float(not pending["is_first"]))
        pending["is_terminal"].append(float(is_terminal))

    def end_episode(self) -> None:
        """Commit the open episode; the oldest episodes are evicted past capacity."""
        if not self._pending["obs"]:
            return
        episode = {name: np.array(values) for name, values in self._pending.items()}
        self._pending = {name: [] for name in FIELDS}
        self.add_episode(episode)

    def add_episode(self, episode: Dict[str, np.ndarray]) -> None:
        length = len(episode["obs"])
        if length == 0:
            return
        episode = dict(episode)
        episode["is_first"] = np.zeros(length)
        episode["is_first"][0] = 1.0
        with self._lock:
            self._episodes.append(episode)
            self._steps += length
            while self._steps > self.capacity and len(self._episodes) > 1:
                self._steps -= len(self._episodes.popleft()["obs"])
            self._stream = None
        logger.debug(
            f"Episode of {length} steps stored "
            f"({self._steps} steps in {len(self._episodes)} episodes)"
        )

    def _snapshot(self) -> Dict[str, np.ndarray]:
        with self._lock:
            if self._stream is None and self._episodes:
                self._stream = {
                    name: np.concatenate([ep[name] for ep in self._episodes])
                    for name in FIELDS
                }
            return self._stream

    def sample_batch(
        self, batch_size: int, length: int, rng: np.random.Generator
    ) -> SequenceBatch:
        """Window starts uniform over [0, N - T]; joins carry ``is_first``."""
        stream = self._snapshot()
        available = 0 if stream is None else stream["obs"].shape[0]
        if available < length:
            raise ReplayNotReady(available, length)
        starts = rng.integers(0, available - length + 1, size=batch_size)
        index = starts[:, None] + np.arange(length)[None, :]
        return SequenceBatch(
            **{name: stream[name][index] for name in FIELDS}, starts=starts
        )

    # --- persistence ---------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = {}
        with self._lock:
            lengths = [len(ep["obs"]) for ep in self._episodes]
            state["lengths"] = np.array(lengths, dtype=np.float64)
            for name in FIELDS:
                if self._episodes:
                    state[name] = np.concatenate([ep[name] for ep in self._episodes])
        state["pending_length"] = np.array(len(self._pending["obs"]), dtype=np.float64)
        for name in FIELDS:
            if self._pending["obs"]:
                state[f"pending.{name}"] = np.array(self._pending[name])
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        episodes: Deque[Dict[str, np.ndarray]] = deque()
        offset = 0
        for length in state["lengths"].astype(np.int64):
            episodes.append(
                {
                    name: np.array(state[name][offset : offset + length])
                    for name in FIELDS
                }
            )
            offset += length
        pending = {name: [] for name in FIELDS}
        if int(state["pending_length"]):
            for name in FIELDS:
                pending[name] = list(np.array(state[f"pending.{name}"]))
        with self._lock:
            self._episodes = episodes
            self._steps = offset
            self._pending = pending
            self._stream = None
