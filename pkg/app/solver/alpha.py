"""
File: app/solver/alpha.py
Description: Belief-space value iteration with alpha vectors. The value at
stage k is max over Gamma_k of <alpha, b>; each stage is produced by the
exact cross-sum backup of the previous one and then pruned.
"""

# Standard Library Imports
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Optional

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.core.errors import BackupSizeError, ConfigurationError
from app.solver.tabular import TabularCPOMDP

DEFAULT_BACKUP_CAP = 200_000
_CHUNK = 8192
_PRUNE_CHUNK = 512

Pruning = Literal["witness", "dominance", "none"]
BackupMode = Literal["enumerate", "point", "auto"]


@dataclass(frozen=True)
class AlphaVector:
    values: np.ndarray
    action: int


@dataclass(eq=False)
class AlphaSet:
    """Gamma: rows of ``vectors`` are alpha vectors, ``actions`` their first action."""

    vectors: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        if self.vectors.shape[0] != self.actions.shape[0]:
            raise ValueError(
                f"{self.vectors.shape[0]} vectors but {self.actions.shape[0]} actions"
            )

    @classmethod
    def zero(cls, num_states: int) -> "AlphaSet":
        return cls(np.zeros((1, num_states)), np.array([-1]))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __iter__(self) -> Iterator[AlphaVector]:
        for row, action in zip(self.vectors, self.actions):
            yield AlphaVector(values=row, action=int(action))

    def values(self, beliefs: np.ndarray) -> np.ndarray:
        """max_alpha <alpha, b> for one belief [S] or many [W, S]."""
        beliefs = np.asarray(beliefs, dtype=np.float64)
        best, _ = _argmax_chunked(self.vectors, np.atleast_2d(beliefs))
        return best if beliefs.ndim == 2 else best[0]

    def best_action(self, belief: np.ndarray) -> int:
        _, index = _argmax_chunked(self.vectors, np.atleast_2d(belief))
        return int(self.actions[index[0]])

    def subset(self, index: np.ndarray) -> "AlphaSet":
        return AlphaSet(self.vectors[index], self.actions[index])


def _argmax_chunked(vectors: np.ndarray, beliefs: np.ndarray):
    """Running max/argmax over vector chunks so W x n scores never materialise."""
    best = np.full(beliefs.shape[0], -np.inf)
    index = np.zeros(beliefs.shape[0], dtype=np.int64)
    for start in range(0, vectors.shape[0], _CHUNK):
        scores = beliefs @ vectors[start : start + _CHUNK].T
        local = scores.argmax(axis=1)
        local_best = scores[np.arange(beliefs.shape[0]), local]
        better = local_best > best
        best = np.where(better, local_best, best)
        index = np.where(better, local + start, index)
    return best, index


def project(
    model: TabularCPOMDP, previous: AlphaSet, action: int, observation: int
) -> np.ndarray:
    """g(s) = sum_s' P[s, a, s'] O[s', a, z] alpha(s') for every alpha; [n, S]."""
    kernel = model.P[:, action, :] * model.O[:, action, observation][None, :]
    return previous.vectors @ kernel.T


def backup_size(model: TabularCPOMDP, previous_size: int) -> int:
    return model.num_actions * previous_size**model.num_observations


def exact_pomdp_backup(
    model: TabularCPOMDP,
    previous: AlphaSet,
    signal: Optional[np.ndarray] = None,
    cap: int = DEFAULT_BACKUP_CAP,
) -> AlphaSet:
    """
    Every action paired with every assignment z -> alpha of observations to
    members of ``previous``: |A| * |Gamma|^|Z| vectors, unpruned.
    """
    if len(previous) == 0:
        raise ConfigurationError("backup needs a nonempty previous alpha set")
    signal = model.R if signal is None else signal
    requested = backup_size(model, len(previous))
    if requested > cap:
        raise BackupSizeError(
            model.num_actions, len(previous), model.num_observations, cap
        )

    blocks, actions = [], []
    for a in range(model.num_actions):
        cross = project(model, previous, a, 0)
        for z in range(1, model.num_observations):
            g = project(model, previous, a, z)
            cross = (cross[:, None, :] + g[None, :, :]).reshape(-1, model.num_states)
        blocks.append(signal[:, a][None, :] + model.gamma * cross)
        actions.append(np.full(cross.shape[0], a))
    return AlphaSet(np.concatenate(blocks), np.concatenate(actions))


def _nondominated(V: np.ndarray) -> np.ndarray:
    """
    Sorted indices of the rows no other row dominates pointwise; of exact
    copies only the first survives. Rows are visited by decreasing sum, so a
    dominator is always visited before the rows it dominates.
    """
    n = V.shape[0]
    if n <= 1:
        return np.arange(n, dtype=np.int64)
    keys = [np.arange(n)] + [-V[:, s] for s in range(V.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys + [-V.sum(axis=1)])
    kept = np.empty(n, dtype=np.int64)
    count = 0
    for start in range(0, n, _PRUNE_CHUNK):
        block = order[start : start + _PRUNE_CHUNK]
        rows = V[block]
        covered = np.all(rows[None, :, :] >= rows[:, None, :], axis=2)
        dominated = np.tril(covered, k=-1).any(axis=1)
        for k in range(0, count, _PRUNE_CHUNK):
            earlier = V[kept[k : min(k + _PRUNE_CHUNK, count)]]
            covered = np.all(earlier[None, :, :] >= rows[:, None, :], axis=2)
            dominated |= covered.any(axis=1)
        survivors = block[~dominated]
        kept[count : count + survivors.size] = survivors
        count += survivors.size
    return np.sort(kept[:count])


def prune_dominated(alpha_set: AlphaSet) -> AlphaSet:
    """Drop vectors pointwise-dominated by another member (exact at every b)."""
    return alpha_set.subset(_nondominated(alpha_set.vectors))


def dominance_backup(
    model: TabularCPOMDP, previous: AlphaSet, signal: Optional[np.ndarray] = None
) -> AlphaSet:
    """
    Same vector set as prune_dominated(exact_pomdp_backup(...)), built by
    pruning every partial cross-sum: a sum with a dominated term is itself
    dominated.
    """
    signal = model.R if signal is None else signal
    blocks, actions = [], []
    for a in range(model.num_actions):
        g = project(model, previous, a, 0)
        cross = g[_nondominated(g)]
        for z in range(1, model.num_observations):
            g = project(model, previous, a, z)
            g = g[_nondominated(g)]
            cross = (cross[:, None, :] + g[None, :, :]).reshape(-1, model.num_states)
            cross = cross[_nondominated(cross)]
        blocks.append(signal[:, a][None, :] + model.gamma * cross)
        actions.append(np.full(cross.shape[0], a))
    return prune_dominated(AlphaSet(np.concatenate(blocks), np.concatenate(actions)))


def prune_alpha_set(alpha_set: AlphaSet, witness_beliefs: np.ndarray) -> AlphaSet:
    """
    Keep the argmax vector of every witness belief, then drop members that are
    dominated by another kept member. max <alpha, b> is unchanged at every
    witness.
    """
    witness_beliefs = np.atleast_2d(np.asarray(witness_beliefs, dtype=np.float64))
    if witness_beliefs.shape[0] == 0:
        raise ConfigurationError("witness belief set must be nonempty")
    if len(alpha_set) <= 1:
        return alpha_set
    _, index = _argmax_chunked(alpha_set.vectors, witness_beliefs)
    return prune_dominated(alpha_set.subset(np.unique(index)))


def point_backup(
    model: TabularCPOMDP,
    previous: AlphaSet,
    witness_beliefs: np.ndarray,
    signal: Optional[np.ndarray] = None,
) -> AlphaSet:
    """
    Witness-pruned backup without enumerating the cross-sum: for each witness
    the best assignment decomposes per observation.
    """
    signal = model.R if signal is None else signal
    W = np.atleast_2d(np.asarray(witness_beliefs, dtype=np.float64))
    candidates = np.empty((model.num_actions, W.shape[0], model.num_states))
    for a in range(model.num_actions):
        total = np.zeros((W.shape[0], model.num_states))
        for z in range(model.num_observations):
            g = project(model, previous, a, z)
            _, best = _argmax_chunked(g, W)
            total += g[best]
        candidates[a] = signal[:, a][None, :] + model.gamma * total
    scores = np.einsum("aws,ws->aw", candidates, W)
    best_action = scores.argmax(axis=0)
    vectors = candidates[best_action, np.arange(W.shape[0])]

    unique: Dict[bytes, int] = {}
    for row, (vector, action) in enumerate(zip(vectors, best_action)):
        unique.setdefault(vector.tobytes() + bytes([int(action)]), row)
    rows = np.array(sorted(unique.values()), dtype=np.int64)
    return prune_dominated(AlphaSet(vectors[rows], best_action[rows]))


def witness_beliefs(
    num_states: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Dirichlet(1, ..., 1) samples plus every vertex and the barycenter."""
    samples = rng.dirichlet(np.ones(num_states), size=count)
    barycenter = np.full((1, num_states), 1.0 / num_states)
    return np.concatenate([samples, np.eye(num_states), barycenter])


@dataclass(eq=False)
class SymmetricSolution:
    """
    Per channel, ``stages[k]`` is Gamma with k steps to go. ``point_stages``
    marks the stages built by point backups; those and witness pruning give a
    lower bound on the symmetric value instead of the value itself.
    """

    stages: Dict[str, List[AlphaSet]]
    unpruned_sizes: Dict[str, List[int]] = field(default_factory=dict)
    point_stages: Dict[str, List[bool]] = field(default_factory=dict)
    pruning: Pruning = "none"

    @property
    def horizon(self) -> int:
        return len(next(iter(self.stages.values()))) - 1

    def value(self, beliefs: np.ndarray, channel: str = "reward"):
        return self.stages[channel][-1].values(beliefs)

    def is_exact(self, channel: str = "reward") -> bool:
        return self.pruning != "witness" and not any(self.point_stages.get(channel, []))


def channel_signals(model: TabularCPOMDP) -> Dict[str, np.ndarray]:
    signals = {"reward": model.R}
    for i, cost in enumerate(model.C):
        signals[f"cost{i}"] = cost
    return signals


def solve_symmetric(
    model: TabularCPOMDP,
    horizon: int,
    witness: Optional[np.ndarray] = None,
    pruning: Pruning = "witness",
    backup: BackupMode = "enumerate",
    cap: int = DEFAULT_BACKUP_CAP,
) -> SymmetricSolution:
    """
    Iterated backup + prune for the reward channel and every cost channel.
    ``backup="auto"`` enumerates every stage whose unpruned size fits under
    ``cap`` (pruning partial cross-sums when pruning="dominance") and falls
    back to a point backup at the witnesses only for the stages that do not.
    """
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    if (pruning == "witness" or backup == "point") and witness is None:
        raise ConfigurationError("witness beliefs are required for this mode")

    stages: Dict[str, List[AlphaSet]] = {}
    sizes: Dict[str, List[int]] = {}
    point_stages: Dict[str, List[bool]] = {}
    for channel, signal in channel_signals(model).items():
        sets = [AlphaSet.zero(model.num_states)]
        sizes[channel] = []
        point_stages[channel] = []
        for _ in range(horizon):
            previous = sets[-1]
            requested = backup_size(model, len(previous))
            over_cap = requested > cap
            use_point = backup == "point" or (
                backup == "auto" and over_cap and witness is not None
            )
            if use_point:
                if backup == "auto":
                    logger.debug(
                        f"{channel}: enumeration of {requested} vectors over cap, "
                        f"using point backup"
                    )
                current = point_backup(model, previous, witness, signal)
                sizes[channel].append(requested)
            elif backup == "auto" and pruning == "dominance" and not over_cap:
                current = dominance_backup(model, previous, signal)
                sizes[channel].append(requested)
            else:
                current = exact_pomdp_backup(model, previous, signal, cap)
                sizes[channel].append(len(current))
                if pruning == "witness":
                    current = prune_alpha_set(current, witness)
                elif pruning == "dominance":
                    current = prune_dominated(current)
            point_stages[channel].append(use_point)
            sets.append(current)
        stages[channel] = sets
    return SymmetricSolution(
        stages=stages, unpruned_sizes=sizes, point_stages=point_stages, pruning=pruning
    )
