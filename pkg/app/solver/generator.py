"""
File: app/solver/generator.py
Description: Synthetic CPOMDP instance generator for the verifier suite and
the tests: random instances, fully observable instances and the two-state
tiger-style fixture.
"""

# Standard Library Imports
from dataclasses import dataclass
from typing import List, Optional

# Third-Party Imports
import numpy as np

# Internal Imports
from app.solver.tabular import TabularCPOMDP


@dataclass
class SyntheticInstance:
    """A generated model with the label it was generated under."""

    instance_id: str
    model: TabularCPOMDP
    kind: str  # "random", "fully_observable" or "tiger"


def _rows(rng: np.random.Generator, shape, width: int) -> np.ndarray:
    """Dirichlet(1) rows; renormalised so each sums to 1 within 1e-12."""
    rows = rng.dirichlet(np.ones(width), size=shape)
    return rows / rows.sum(axis=-1, keepdims=True)


class InstanceGenerator:
    """Generates tabular CPOMDPs with Dirichlet(1) dynamics."""

    # Sizes stay inside the range the exact solver handles in seconds
    MAX_STATES = 5
    MAX_ACTIONS = 3
    MAX_OBSERVATIONS = 3

    @staticmethod
    def random_instance(
        rng: np.random.Generator,
        num_states: Optional[int] = None,
        num_actions: Optional[int] = None,
        num_observations: Optional[int] = None,
        gamma: float = 0.95,
        cost_rate: float = 0.3,
    ) -> TabularCPOMDP:
        """Rewards uniform in [0, 1]; one Bernoulli(cost_rate) cost channel."""
        S = num_states or int(rng.integers(2, InstanceGenerator.MAX_STATES + 1))
        A = num_actions or int(rng.integers(2, InstanceGenerator.MAX_ACTIONS + 1))
        Z = num_observations or int(
            rng.integers(2, InstanceGenerator.MAX_OBSERVATIONS + 1)
        )
        return TabularCPOMDP(
            P=_rows(rng, (S, A), S),
            O=_rows(rng, (S, A), Z),
            R=rng.uniform(0.0, 1.0, size=(S, A)),
            C=(rng.random((1, S, A)) < cost_rate).astype(np.float64),
            budgets=np.array([1.0]),
            gamma=gamma,
            b0=_rows(rng, (), S),
        )

    @staticmethod
    def fully_observable_instance(
        rng: np.random.Generator,
        num_states: Optional[int] = None,
        num_actions: Optional[int] = None,
        gamma: float = 0.95,
    ) -> TabularCPOMDP:
        """The observation is the successor state itself."""
        base = InstanceGenerator.random_instance(
            rng, num_states, num_actions, num_observations=2, gamma=gamma
        )
        S, A = base.num_states, base.num_actions
        reveal = np.broadcast_to(np.eye(S)[:, None, :], (S, A, S))
        return TabularCPOMDP(
            P=base.P,
            O=reveal,
            R=base.R,
            C=base.C,
            budgets=base.budgets,
            gamma=gamma,
            b0=base.b0,
        )

    @staticmethod
    def tiger_instance(accuracy: float = 0.85, gamma: float = 0.95) -> TabularCPOMDP:
        """
        Tiger behind the left (s0) or right (s1) door. Listening pays 0.5 and
        hears the correct side with probability ``accuracy``; opening the safe
        door pays 1, the tiger door pays 0 and costs 1. Opening resets the
        tiger uniformly. ``accuracy=0.5`` makes observations uninformative.
        """
        listen, open_left, open_right = 0, 1, 2
        P = np.zeros((2, 3, 2))
        P[:, listen, :] = np.eye(2)
        P[:, open_left, :] = 0.5
        P[:, open_right, :] = 0.5

        O = np.full((2, 3, 2), 0.5)
        O[:, listen, :] = [[accuracy, 1.0 - accuracy], [1.0 - accuracy, accuracy]]

        R = np.array([[0.5, 0.0, 1.0], [0.5, 1.0, 0.0]])
        C = np.array([[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
        return TabularCPOMDP(
            P=P,
            O=O,
            R=R,
            C=C,
            budgets=np.array([1.0]),
            gamma=gamma,
            b0=np.array([0.5, 0.5]),
            state_names=["tiger_left", "tiger_right"],
            action_names=["listen", "open_left", "open_right"],
            observation_names=["hear_left", "hear_right"],
        )

    @staticmethod
    def generate_suite(
        count: int,
        seed: int,
        fully_observable_every: int = 0,
        num_actions: Optional[int] = None,
        num_observations: Optional[int] = None,
    ) -> List[SyntheticInstance]:
        """
        ``count`` instances from one seed. With ``fully_observable_every=n``
        every n-th instance is fully observable. Unset sizes are drawn per
        instance.
        """
        rng = np.random.default_rng(seed)
        suite = []
        for i in range(count):
            if fully_observable_every and (i + 1) % fully_observable_every == 0:
                model = InstanceGenerator.fully_observable_instance(
                    rng, num_actions=num_actions
                )
                kind = "fully_observable"
            else:
                model = InstanceGenerator.random_instance(
                    rng, num_actions=num_actions, num_observations=num_observations
                )
                kind = "random"
            suite.append(SyntheticInstance(f"{kind}-{i:03d}", model, kind))
        return suite
