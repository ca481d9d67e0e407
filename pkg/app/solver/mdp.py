"""
File: app/solver/mdp.py
Description: Finite-horizon state-space value iteration. These are the
asymmetric (state-conditioned) values; a belief is scored by the expectation
of the stage-0 state values under it.
"""

# Standard Library Imports
from dataclasses import dataclass
from typing import Sequence

# Third-Party Imports
import numpy as np

# Internal Imports
from app.core.errors import ConfigurationError
from app.solver.tabular import TabularCPOMDP


@dataclass(frozen=True, eq=False)
class StageValues:
    """Row t holds values with ``horizon - t`` steps to go; row 0 is the answer."""

    reward: np.ndarray  # [H + 1, S]
    costs: np.ndarray  # [k, H + 1, S]

    @property
    def horizon(self) -> int:
        return self.reward.shape[0] - 1


def max_backup_values(
    P: np.ndarray, signal: np.ndarray, gamma: float, horizon: int
) -> np.ndarray:
    """V_t(s) = max_a [x(s, a) + gamma * sum_s' P(s, a, s') V_{t+1}(s')]."""
    if horizon < 0:
        raise ConfigurationError(f"horizon must be >= 0, got {horizon}")
    values = np.zeros((horizon + 1, P.shape[0]))
    for t in range(horizon - 1, -1, -1):
        values[t] = q_backup(P, signal, gamma, values[t + 1]).max(axis=1)
    return values


def q_backup(
    P: np.ndarray, signal: np.ndarray, gamma: float, next_values: np.ndarray
) -> np.ndarray:
    """Q(s, a) = x(s, a) + gamma * E[V(s') | s, a]."""
    return signal + gamma * (P @ next_values)


def mdp_value_iteration(model: TabularCPOMDP, horizon: int) -> StageValues:
    """Reward channel plus each cost channel, all under max-backup."""
    reward = max_backup_values(model.P, model.R, model.gamma, horizon)
    costs = np.stack(
        [max_backup_values(model.P, c, model.gamma, horizon) for c in model.C]
    ) if model.num_costs else np.zeros((0, horizon + 1, model.num_states))
    return StageValues(reward=reward, costs=costs)


def asymmetric_belief_value(state_values: np.ndarray, belief: np.ndarray) -> float:
    state_values = np.asarray(state_values, dtype=np.float64)
    belief = np.asarray(belief, dtype=np.float64)
    if state_values.shape != belief.shape:
        raise ValueError(
            f"value shape {state_values.shape} != belief shape {belief.shape}"
        )
    return float(belief @ state_values)


def scalarized_value_iteration(
    model: TabularCPOMDP, multipliers: Sequence[float], horizon: int
) -> np.ndarray:
    """Value iteration on R - sum_i lambda_i C_i; returns [H + 1, S]."""
    multipliers = np.asarray(multipliers, dtype=np.float64)
    if multipliers.shape != (model.num_costs,):
        raise ConfigurationError(
            f"{multipliers.shape} multipliers for {model.num_costs} cost channels"
        )
    if np.any(multipliers < 0):
        raise ConfigurationError(f"multipliers must be >= 0, got {multipliers}")
    surrogate = model.R - np.tensordot(multipliers, model.C, axes=1)
    return max_backup_values(model.P, surrogate, model.gamma, horizon)


def greedy_actions(
    model: TabularCPOMDP,
    values: np.ndarray,
    stage: int = 0,
    multipliers: Sequence[float] = (),
) -> np.ndarray:
    """argmax_a of the (scalarized) Q-values at ``stage``."""
    signal = model.R
    if len(multipliers):
        signal = model.R - np.tensordot(np.asarray(multipliers), model.C, axes=1)
    return q_backup(model.P, signal, model.gamma, values[stage + 1]).argmax(axis=1)
