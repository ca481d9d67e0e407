"""
File: app/envs/gridworld.py
Description: Partially observable hazard/goal gridworld. The agent sees a
noisy egocentric occupancy window; a privileged vector with the exact goal
displacement, nearby hazards and recent actions is available at training time
only, and every read of it is counted.
"""

# Standard Library Imports
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

# Third-Party Imports
import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator

# Internal Imports
from app.core.errors import ConfigurationError, EpisodeFinishedError

Cell = Tuple[int, int]

# (dx, dy) per action; y grows downward
ACTION_MOVES: Dict[int, Cell] = {
    0: (0, -1),  # up
    1: (0, 1),  # down
    2: (-1, 0),  # left
    3: (1, 0),  # right
    4: (0, 0),  # stay
}
ACTION_NAMES = ["up", "down", "left", "right", "stay"]
NUM_ACTIONS = len(ACTION_MOVES)
NUM_CHANNELS = 3  # wall, hazard, goal
ACTION_HISTORY = 3


class GridWorldConfig(BaseModel):
    width: int = Field(default=5, ge=1)
    height: int = Field(default=5, ge=1)
    walls: List[Cell] = Field(default_factory=list)
    hazards: List[Cell] = Field(default_factory=list)
    goal: Cell = (4, 4)
    # Uniform over these cells; empty means every free, non-goal, non-hazard cell
    start_cells: List[Cell] = Field(default_factory=list)
    window_radius: int = Field(default=1, ge=0)
    noise: float = Field(default=0.1, ge=0.0, le=1.0)
    max_steps: int = Field(default=200, ge=1)
    budget: float = Field(default=2.0, ge=0.0)
    action_repeat: int = Field(default=1, ge=1)
    shaping: float = Field(default=0.05, ge=0.0)
    goal_reward: float = 1.0
    nearest_hazards: int = Field(default=3, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_layout(self) -> "GridWorldConfig":
        for name in ("walls", "hazards", "start_cells"):
            for cell in getattr(self, name):
                if not self.in_bounds(cell):
                    raise ValueError(f"{name} cell {cell} outside the grid")
        if not self.in_bounds(self.goal):
            raise ValueError(f"goal {self.goal} outside the grid")
        if tuple(self.goal) in {tuple(c) for c in self.hazards}:
            raise ValueError("goal must not be a hazard cell")
        walls = {tuple(c) for c in self.walls}
        if tuple(self.goal) in walls:
            raise ValueError("goal must not be a wall cell")
        if any(tuple(c) in walls for c in self.start_cells):
            raise ValueError("start cells must not be walls")
        return self

    def in_bounds(self, cell: Sequence[int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    @property
    def window_size(self) -> int:
        return 2 * self.window_radius + 1

    @property
    def observation_dim(self) -> int:
        return NUM_CHANNELS * self.window_size**2

    @property
    def privileged_dim(self) -> int:
        n = self.nearest_hazards
        return 2 + 3 * n + ACTION_HISTORY * NUM_ACTIONS + 2


def free_cells(config: GridWorldConfig) -> List[Cell]:
    """Non-wall cells in row-major (y, then x) order."""
    walls = {tuple(c) for c in config.walls}
    return [
        (x, y)
        for y in range(config.height)
        for x in range(config.width)
        if (x, y) not in walls
    ]


def start_distribution(config: GridWorldConfig) -> List[Cell]:
    if config.start_cells:
        return [tuple(c) for c in config.start_cells]
    hazards = {tuple(c) for c in config.hazards}
    return [
        c for c in free_cells(config) if c != tuple(config.goal) and c not in hazards
    ]


def reachable_cells(config: GridWorldConfig, origin: Cell) -> set:
    """Flood fill over non-wall cells (hazards are passable)."""
    walls = {tuple(c) for c in config.walls}
    seen, frontier = {origin}, [origin]
    while frontier:
        x, y = frontier.pop()
        for dx, dy in ACTION_MOVES.values():
            nxt = (x + dx, y + dy)
            if nxt not in seen and config.in_bounds(nxt) and nxt not in walls:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def check_reachable(config: GridWorldConfig) -> None:
    starts = start_distribution(config)
    if not starts:
        raise ConfigurationError("no start cell available")
    for start in starts:
        if tuple(config.goal) not in reachable_cells(config, start):
            raise ConfigurationError(
                f"goal {tuple(config.goal)} is unreachable from start {start}"
            )


def move(config: GridWorldConfig, position: Cell, action: int) -> Cell:
    """One micro-step; leaving the grid or entering a wall leaves the agent put."""
    dx, dy = ACTION_MOVES[action]
    nxt = (position[0] + dx, position[1] + dy)
    if not config.in_bounds(nxt) or nxt in {tuple(c) for c in config.walls}:
        return position
    return nxt


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def window_pattern(config: GridWorldConfig, position: Cell) -> np.ndarray:
    """
    Noiseless egocentric window, shape [3, 2k+1, 2k+1]. The agent's own cell
    is not sensed and stays 0; cells outside the grid read as walls.
    """
    k = config.window_radius
    walls = {tuple(c) for c in config.walls}
    hazards = {tuple(c) for c in config.hazards}
    goal = tuple(config.goal)
    planes = np.zeros((NUM_CHANNELS, 2 * k + 1, 2 * k + 1))
    for row, dy in enumerate(range(-k, k + 1)):
        for col, dx in enumerate(range(-k, k + 1)):
            if dx == 0 and dy == 0:
                continue
            cell = (position[0] + dx, position[1] + dy)
            if not config.in_bounds(cell) or cell in walls:
                planes[0, row, col] = 1.0
            if cell in hazards:
                planes[1, row, col] = 1.0
            if cell == goal:
                planes[2, row, col] = 1.0
    return planes


def sensed_mask(config: GridWorldConfig) -> np.ndarray:
    """Flat mask of the observation bits that carry information (not the centre)."""
    size = config.window_size
    mask = np.ones((NUM_CHANNELS, size, size), dtype=bool)
    mask[:, config.window_radius, config.window_radius] = False
    return mask.reshape(-1)


class AccessCounter:
    """Counts reads of privileged information."""

    def __init__(self):
        self.reads = 0


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    cost: float
    terminal: bool
    truncated: bool
    _privileged: np.ndarray = field(repr=False)
    _counter: AccessCounter = field(repr=False)

    @property
    def privileged(self) -> np.ndarray:
        self._counter.reads += 1
        return self._privileged

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


@dataclass
class EnvState:
    position: Cell
    steps: int = 0
    terminal: bool = False
    truncated: bool = False
    last_actions: Tuple[int, ...] = ()
    displacement: Cell = (0, 0)
    episode_return: float = 0.0
    episode_cost: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "position": list(self.position),
            "steps": self.steps,
            "terminal": self.terminal,
            "truncated": self.truncated,
            "last_actions": list(self.last_actions),
            "displacement": list(self.displacement),
            "episode_return": self.episode_return,
            "episode_cost": self.episode_cost,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnvState":
        return cls(
            position=tuple(data["position"]),
            steps=int(data["steps"]),
            terminal=bool(data["terminal"]),
            truncated=bool(data["truncated"]),
            last_actions=tuple(data["last_actions"]),
            displacement=tuple(data["displacement"]),
            episode_return=float(data["episode_return"]),
            episode_cost=float(data["episode_cost"]),
        )


class GridWorld:
    """Single-threaded environment instance."""

    def __init__(self, config: GridWorldConfig, record_episode: bool = False):
        self.config = config
        self.access = AccessCounter()
        self.record_episode = record_episode
        self.episode_log: List[Dict[str, Any]] = []
        self.state: Optional[EnvState] = None
        self._rng = np.random.default_rng(config.seed)
        self._walls = {tuple(c) for c in config.walls}
        self._hazards = {tuple(c) for c in config.hazards}
        self._goal: Cell = tuple(config.goal)
        self._sensed = sensed_mask(config)
        self._checked = False

    @property
    def privileged_reads(self) -> int:
        return self.access.reads

    def reset(
        self, seed: Optional[int] = None
    ) -> Tuple[np.ndarray, StepResult, EnvState]:
        """
        Place the agent. Returns the observation, a zero-reward step view whose
        ``privileged`` property gives the initial privileged vector, and the state.
        """
        if not self._checked:
            check_reachable(self.config)
            self._checked = True
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        starts = start_distribution(self.config)
        position = starts[int(self._rng.integers(len(starts)))]
        self.state = EnvState(position=position)
        self.episode_log = []
        first = self._result(reward=0.0, cost=0.0)
        logger.debug(f"Episode reset at {position}")
        return first.observation, first, self.state

    def step(self, action: int) -> StepResult:
        state = self.state
        if state is None or state.terminal or state.truncated:
            raise EpisodeFinishedError("step called on a finished episode; reset first")
        if action not in ACTION_MOVES:
            raise ValueError(f"action must be in 0..{NUM_ACTIONS - 1}, got {action}")

        start = state.position
        reward = cost = 0.0
        for _ in range(self.config.action_repeat):
            before = state.position
            state.position = move(self.config, before, action)
            state.steps += 1
            reward += self.config.shaping * (
                manhattan(before, self._goal) - manhattan(state.position, self._goal)
            )
            if state.position in self._hazards:
                cost += 1.0
            if state.position == self._goal:
                reward += self.config.goal_reward
                state.terminal = True
                break
            if state.steps >= self.config.max_steps:
                state.truncated = True
                break

        state.displacement = (state.position[0] - start[0], state.position[1] - start[1])
        state.last_actions = ((action,) + state.last_actions)[:ACTION_HISTORY]
        state.episode_return += reward
        state.episode_cost += cost
        if self.record_episode:
            self.episode_log.append(
                {
                    "t": state.steps,
                    "a": action,
                    "r": reward,
                    "c": cost,
                    "x": state.position[0],
                    "y": state.position[1],
                }
            )
        return self._result(reward, cost)

    def place(self, position: Cell) -> None:
        """Teleport into a fresh episode at ``position`` (export cross-checks)."""
        if position in self._walls or not self.config.in_bounds(position):
            raise ConfigurationError(f"cannot place the agent at {position}")
        self.state = EnvState(position=tuple(position))

    def observe(self, position: Cell) -> np.ndarray:
        clean = window_pattern(self.config, position).reshape(-1)
        if self.config.noise <= 0.0:
            return clean
        flips = (self._rng.random(clean.shape) < self.config.noise) & self._sensed
        return np.where(flips, 1.0 - clean, clean)

    def privileged_vector(self, state: EnvState) -> np.ndarray:
        x, y = state.position
        n = self.config.nearest_hazards
        goal = [self._goal[0] - x, self._goal[1] - y]

        offsets = sorted(
            ((hx - x, hy - y) for hx, hy in self._hazards),
            key=lambda d: (abs(d[0]) + abs(d[1]), d[1], d[0]),
        )[:n]
        hazards = np.zeros((n, 2))
        mask = np.zeros(n)
        for i, offset in enumerate(offsets):
            hazards[i] = offset
            mask[i] = 1.0

        history = np.zeros((ACTION_HISTORY, NUM_ACTIONS))
        for i, action in enumerate(state.last_actions):
            history[i, action] = 1.0
        return np.concatenate(
            [goal, hazards.reshape(-1), mask, history.reshape(-1), state.displacement]
        ).astype(np.float64)

    def _result(self, reward: float, cost: float) -> StepResult:
        state = self.state
        return StepResult(
            observation=self.observe(state.position),
            reward=reward,
            cost=cost,
            terminal=state.terminal,
            truncated=state.truncated,
            _privileged=self.privileged_vector(state),
            _counter=self.access,
        )

    # --- persistence ---------------------------------------------------------

    def get_state(self) -> Dict[str, Any]:
        return {
            "state": None if self.state is None else self.state.to_dict(),
            "rng": self._rng.bit_generator.state,
            "checked": self._checked,
        }

    def set_state(self, data: Dict[str, Any]) -> None:
        self.state = None if data["state"] is None else EnvState.from_dict(data["state"])
        self._rng.bit_generator.state = data["rng"]
        self._checked = bool(data["checked"])


def write_episode_csv(rows: List[Dict[str, Any]], path: Union[str, Path]) -> None:
    """Debug dump of one episode as (t, a, r, c, x, y)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=["t", "a", "r", "c", "x", "y"])
        writer.writeheader()
        writer.writerows(rows)
