"""
File: app/envs/export.py
Description: Exports a small gridworld as a TabularCPOMDP with exactly the
simulator's dynamics, and cross-checks the export against simulated
transition and observation frequencies.
"""

# Standard Library Imports
from dataclasses import dataclass
from typing import Dict, List, Tuple

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.core.errors import ConfigurationError
from app.envs.gridworld import (
    ACTION_NAMES,
    NUM_ACTIONS,
    Cell,
    GridWorld,
    GridWorldConfig,
    check_reachable,
    free_cells,
    manhattan,
    move,
    sensed_mask,
    start_distribution,
    window_pattern,
)
from app.solver.tabular import TabularCPOMDP

MAX_EXPORT_CELLS = 25
MAX_EXPORT_PATTERNS = 256


@dataclass(eq=False)
class ExportedGrid:
    model: TabularCPOMDP
    cells: List[Cell]
    patterns: np.ndarray  # [|Z|, obs_dim], noiseless

    def state_index(self, cell: Cell) -> int:
        return self.cells.index(tuple(cell))

    def pattern_index(self, observation: np.ndarray) -> int:
        matches = np.flatnonzero(np.all(self.patterns == observation, axis=1))
        if matches.size == 0:
            raise KeyError("observation is not one of the exported patterns")
        return int(matches[0])


def _macro_step(
    config: GridWorldConfig, cell: Cell, action: int
) -> Tuple[Cell, float, float]:
    """action_repeat micro-steps from ``cell``; stops on reaching the goal."""
    goal = tuple(config.goal)
    hazards = {tuple(c) for c in config.hazards}
    reward = cost = 0.0
    for _ in range(config.action_repeat):
        before = cell
        cell = move(config, before, action)
        reward += config.shaping * (manhattan(before, goal) - manhattan(cell, goal))
        if cell in hazards:
            cost += 1.0
        if cell == goal:
            reward += config.goal_reward
            break
    return cell, reward, cost


def export_tabular(
    config: GridWorldConfig,
    gamma: float = 0.95,
    max_cells: int = MAX_EXPORT_CELLS,
    max_patterns: int = MAX_EXPORT_PATTERNS,
) -> ExportedGrid:
    """
    S = free cells, Z = distinct noiseless windows. With noise > 0 the
    observation row is the bit-flip likelihood over the exported patterns,
    renormalised. The goal is absorbing with zero reward and cost; episode
    truncation is not modelled.
    """
    check_reachable(config)
    cells = free_cells(config)
    if len(cells) > max_cells:
        raise ConfigurationError(
            f"export needs at most {max_cells} free cells, the grid has {len(cells)}"
        )

    mask = sensed_mask(config)
    flat = [window_pattern(config, c).reshape(-1) for c in cells]
    patterns: List[np.ndarray] = []
    lookup: Dict[bytes, int] = {}
    state_pattern = []
    for pattern in flat:
        key = pattern.tobytes()
        if key not in lookup:
            lookup[key] = len(patterns)
            patterns.append(pattern)
        state_pattern.append(lookup[key])
    if len(patterns) > max_patterns:
        raise ConfigurationError(
            f"export needs at most {max_patterns} window patterns, found {len(patterns)}"
        )

    S, A, Z = len(cells), NUM_ACTIONS, len(patterns)
    index = {cell: i for i, cell in enumerate(cells)}
    goal = tuple(config.goal)

    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    C = np.zeros((1, S, A))
    for s, cell in enumerate(cells):
        for a in range(A):
            if cell == goal:
                P[s, a, s] = 1.0
                continue
            nxt, reward, cost = _macro_step(config, cell, a)
            P[s, a, index[nxt]] = 1.0
            R[s, a] = reward
            C[0, s, a] = cost

    pattern_array = np.array(patterns)
    likelihood = _flip_likelihood(pattern_array, mask, config.noise)  # [Z_true, Z]
    O = np.zeros((S, A, Z))
    for s in range(S):
        O[s, :, :] = likelihood[state_pattern[s]][None, :]

    starts = start_distribution(config)
    b0 = np.zeros(S)
    for cell in starts:
        b0[index[cell]] += 1.0 / len(starts)

    model = TabularCPOMDP(
        P=P,
        O=O,
        R=R,
        C=C,
        budgets=np.array([config.budget]),
        gamma=gamma,
        b0=b0,
        state_names=[f"({x},{y})" for x, y in cells],
        action_names=list(ACTION_NAMES),
        observation_names=[f"pattern{z}" for z in range(Z)],
    )
    logger.info(f"Exported grid: |S|={S}, |A|={A}, |Z|={Z}")
    return ExportedGrid(model=model, cells=cells, patterns=pattern_array)


def _flip_likelihood(
    patterns: np.ndarray, mask: np.ndarray, noise: float
) -> np.ndarray:
    """Row i: Pr(observe pattern j | true pattern i) restricted to the set, normalised."""
    if noise <= 0.0:
        return np.eye(patterns.shape[0])
    sensed = patterns[:, mask]
    distance = (sensed[:, None, :] != sensed[None, :, :]).sum(axis=-1)
    bits = sensed.shape[1]
    weights = noise**distance * (1.0 - noise) ** (bits - distance)
    return weights / weights.sum(axis=1, keepdims=True)


@dataclass
class CrossCheck:
    transition_tv: float
    observation_tv: float
    pairs: int


def monte_carlo_check(
    config: GridWorldConfig,
    exported: ExportedGrid,
    trials: int,
    rng: np.random.Generator,
) -> CrossCheck:
    """
    Worst total-variation distance over (s, a) between simulated frequencies
    and the exported rows. Observation frequencies are compared at noise 0;
    transitions at the configured noise.
    """
    model = exported.model
    quiet = config.model_copy(update={"noise": 0.0})
    env = GridWorld(config)
    quiet_env = GridWorld(quiet)
    env.reset(seed=int(rng.integers(2**31)))
    goal = tuple(config.goal)

    worst_p = worst_o = 0.0
    pairs = 0
    for s, cell in enumerate(exported.cells):
        if cell == goal:
            continue
        for a in range(model.num_actions):
            next_counts = np.zeros(model.num_states)
            obs_counts = np.zeros(model.num_observations)
            for _ in range(trials):
                env.place(cell)
                env.step(a)
                next_counts[exported.state_index(env.state.position)] += 1
            quiet_env.place(cell)
            result = quiet_env.step(a)
            obs_counts[exported.pattern_index(result.observation)] += trials

            worst_p = max(
                worst_p, 0.5 * np.abs(next_counts / trials - model.P[s, a]).sum()
            )
            if config.noise <= 0.0:
                s_next = exported.state_index(quiet_env.state.position)
                worst_o = max(
                    worst_o,
                    0.5 * np.abs(obs_counts / trials - model.O[s_next, a]).sum(),
                )
            pairs += 1
    logger.debug(f"Cross-check over {pairs} pairs: P tv {worst_p}, O tv {worst_o}")
    return CrossCheck(transition_tv=worst_p, observation_tv=worst_o, pairs=pairs)
