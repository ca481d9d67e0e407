"""
File: app/core/distributions.py
Description: Grouped categorical distributions over logits of shape
[..., groups, classes], straight-through sampling and the categorical KL.
"""

# Third-Party Imports
import numpy as np

# Internal Imports
from app.core import grad as G
from app.core.errors import ShapeError


class CategoricalDistribution:
    """Independent categoricals, one per group, parameterised by logits."""

    def __init__(self, logits: G.Tensor):
        logits = G.as_tensor(logits)
        if logits.ndim < 2:
            raise ShapeError(
                f"categorical logits need [..., groups, classes], got {logits.shape}"
            )
        self.logits = logits
        self._probs = None
        self._log_probs = None

    @property
    def groups(self) -> int:
        return self.logits.shape[-2]

    @property
    def classes(self) -> int:
        return self.logits.shape[-1]

    @property
    def probs(self) -> G.Tensor:
        if self._probs is None:
            self._probs = G.softmax(self.logits, axis=-1)
        return self._probs

    @property
    def log_probs(self) -> G.Tensor:
        if self._log_probs is None:
            self._log_probs = G.log_softmax(self.logits, axis=-1)
        return self._log_probs

    def sample(self, rng: np.random.Generator) -> G.Tensor:
        """One-hot sample per group; gradients flow through the softmax."""
        probs = self.probs.data
        flat = probs.reshape(-1, self.classes)
        draws = rng.random((flat.shape[0], 1))
        index = (np.cumsum(flat, axis=1) < draws).sum(axis=1)
        index = np.minimum(index, self.classes - 1)
        return G.straight_through(self._one_hot(index), self.probs)

    def mode(self) -> G.Tensor:
        index = self.probs.data.reshape(-1, self.classes).argmax(axis=1)
        return G.straight_through(self._one_hot(index), self.probs)

    def log_prob(self, one_hot: G.Tensor) -> G.Tensor:
        return (G.as_tensor(one_hot) * self.log_probs).sum(axis=-1).sum(axis=-1)

    def entropy(self) -> G.Tensor:
        return -(self.probs * self.log_probs).sum(axis=-1).sum(axis=-1)

    def detach(self) -> "CategoricalDistribution":
        return CategoricalDistribution(G.stop_gradient(self.logits))

    def _one_hot(self, index: np.ndarray) -> np.ndarray:
        hard = np.zeros((index.shape[0], self.classes))
        hard[np.arange(index.shape[0]), index] = 1.0
        return hard.reshape(self.logits.shape)


def kl_categorical(
    q: CategoricalDistribution, p: CategoricalDistribution, reduce_groups: bool = True
) -> G.Tensor:
    """KL[q || p] in nats, summed over classes and (by default) over groups."""
    if q.logits.shape != p.logits.shape:
        raise ShapeError(
            f"kl_categorical: shapes {q.logits.shape} and {p.logits.shape} differ"
        )
    per_group = (q.probs * (q.log_probs - p.log_probs)).sum(axis=-1)
    return per_group.sum(axis=-1) if reduce_groups else per_group
