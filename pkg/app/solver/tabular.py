"""
File: app/solver/tabular.py
Description: Finite constrained POMDP instances, belief filtering and the
JSON instance file format.
"""

# Standard Library Imports
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

# Third-Party Imports
import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

# Internal Imports
from app.core.errors import ConfigurationError, ImpossibleObservationError

ROW_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class TabularCPOMDP:
    """
    P[s, a, s'], O[s', a, z], R[s, a], C[i, s, a] with budgets b_i.
    Arrays are validated on construction and never mutated afterwards.
    """

    P: np.ndarray
    O: np.ndarray
    R: np.ndarray
    C: np.ndarray
    budgets: np.ndarray
    gamma: float
    b0: np.ndarray
    state_names: Optional[List[str]] = field(default=None, compare=False)
    action_names: Optional[List[str]] = field(default=None, compare=False)
    observation_names: Optional[List[str]] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("P", "O", "R", "C", "budgets", "b0"):
            value = np.array(getattr(self, name), dtype=np.float64)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        self._validate()

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]

    @property
    def num_observations(self) -> int:
        return self.O.shape[2]

    @property
    def num_costs(self) -> int:
        return self.C.shape[0]

    def _validate(self) -> None:
        S, A = self.R.shape if self.R.ndim == 2 else (-1, -1)
        if self.P.shape != (S, A, S):
            raise ConfigurationError(f"P shape {self.P.shape} != {(S, A, S)}")
        if self.O.ndim != 3 or self.O.shape[:2] != (S, A):
            raise ConfigurationError(f"O shape {self.O.shape} != ({S}, {A}, |Z|)")
        if self.C.ndim != 3 or self.C.shape[1:] != (S, A):
            raise ConfigurationError(f"C shape {self.C.shape} != (k, {S}, {A})")
        if self.budgets.shape != (self.C.shape[0],):
            raise ConfigurationError(
                f"{self.budgets.shape[0] if self.budgets.ndim else 0} budgets "
                f"for {self.C.shape[0]} cost channels"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name, rows in (("P", self.P), ("O", self.O)):
            if np.any(rows < 0) or np.any(
                np.abs(rows.sum(axis=-1) - 1.0) > ROW_TOLERANCE
            ):
                raise ConfigurationError(f"{name} rows must be distributions")
        if not is_valid_belief(self.b0) or self.b0.shape != (S,):
            raise ConfigurationError("b0 must be a distribution over states")


def is_valid_belief(belief: np.ndarray, tolerance: float = ROW_TOLERANCE) -> bool:
    belief = np.asarray(belief)
    return bool(np.all(belief >= 0) and abs(belief.sum() - 1.0) <= tolerance)


def observation_probability(
    model: TabularCPOMDP, belief: np.ndarray, action: int, observation: int
) -> float:
    predicted = belief @ model.P[:, action, :]
    return float(predicted @ model.O[:, action, observation])


def belief_update(
    model: TabularCPOMDP, belief: np.ndarray, action: int, observation: int
) -> np.ndarray:
    """b'(s') ∝ O[s', a, z] * sum_s P[s, a, s'] b(s)."""
    unnormalised = model.O[:, action, observation] * (belief @ model.P[:, action, :])
    total = unnormalised.sum()
    if total <= 0.0:
        raise ImpossibleObservationError(
            f"Observation {observation} has probability 0 after action {action}"
        )
    return unnormalised / total


# --- file format -------------------------------------------------------------


class TabularCPOMDPFile(BaseModel):
    """JSON layout of an instance file."""

    states: List[str]
    actions: List[str]
    observations: List[str]
    P: List[List[List[float]]]
    O: List[List[List[float]]]
    R: List[List[float]]
    C: List[List[List[float]]] = Field(default_factory=list)
    budgets: List[float] = Field(default_factory=list)
    gamma: float = Field(gt=0, le=1)
    b0: List[float]

    def to_model(self) -> TabularCPOMDP:
        S, A = len(self.states), len(self.actions)
        costs = np.array(self.C, dtype=np.float64).reshape(len(self.C), S, A)
        return TabularCPOMDP(
            P=np.array(self.P),
            O=np.array(self.O),
            R=np.array(self.R),
            C=costs,
            budgets=np.array(self.budgets, dtype=np.float64),
            gamma=self.gamma,
            b0=np.array(self.b0),
            state_names=list(self.states),
            action_names=list(self.actions),
            observation_names=list(self.observations),
        )

    @classmethod
    def from_model(cls, model: TabularCPOMDP) -> "TabularCPOMDPFile":
        return cls(
            states=model.state_names or [f"s{i}" for i in range(model.num_states)],
            actions=model.action_names or [f"a{i}" for i in range(model.num_actions)],
            observations=model.observation_names
            or [f"z{i}" for i in range(model.num_observations)],
            P=model.P.tolist(),
            O=model.O.tolist(),
            R=model.R.tolist(),
            C=model.C.tolist(),
            budgets=model.budgets.tolist(),
            gamma=model.gamma,
            b0=model.b0.tolist(),
        )


def load_instance(path: Union[str, Path]) -> TabularCPOMDP:
    text = Path(path).read_text(encoding="utf-8")
    model = TabularCPOMDPFile.model_validate_json(text).to_model()
    logger.debug(
        f"Loaded instance {path}: |S|={model.num_states}, |A|={model.num_actions}, "
        f"|Z|={model.num_observations}"
    )
    return model


def save_instance(model: TabularCPOMDP, path: Union[str, Path]) -> None:
    Path(path).write_text(
        TabularCPOMDPFile.from_model(model).model_dump_json(indent=2), encoding="utf-8"
    )
    logger.info(f"Instance written to {path}")
