"""
File: app/core/nn.py
Description: Parameter containers and layers built on the grad engine:
affine layers, MLPs and the gated recurrent cell of the latent dynamics.
"""

# Standard Library Imports
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Sequence

# Third-Party Imports
import numpy as np

# Internal Imports
from app.core import grad as G
from app.core.errors import ShapeError

ACTIVATIONS: Dict[str, Callable[[G.Tensor], G.Tensor]] = {
    "elu": G.elu,
    "tanh": G.tanh,
    "sigmoid": G.sigmoid,
}


class Module:
    """Collects parameters from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Dict[str, G.Tensor]:
        found: Dict[str, G.Tensor] = {}
        # Parameters are the leaf tensors stored under a "p_" attribute.
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, G.Tensor) and value.is_leaf and name.startswith("p_"):
                found[f"{prefix}{name[2:]}"] = value
            elif isinstance(value, Module):
                found.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{key}.{index}."))
        return found

    def parameters(self) -> List[G.Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    @contextmanager
    def frozen(self) -> Iterator["Module"]:
        """Treat every parameter as a constant inside the block."""
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(params, flags):
                p.requires_grad = flag

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"State is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(
                    f"{name}: stored shape {value.shape} != parameter {p.shape}"
                )
            p.data = value.copy()

    def ema_from(self, online: "Module", tau: float) -> None:
        """self <- (1 - tau) * self + tau * online, parameter by parameter."""
        for mine, theirs in zip(self.parameters(), online.parameters()):
            mine.data = (1.0 - tau) * mine.data + tau * theirs.data


class Linear(Module):
    def __init__(
        self, in_dim: int, out_dim: int, rng: np.random.Generator, scale: float = 1.0
    ):
        limit = scale * np.sqrt(6.0 / (in_dim + out_dim))
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.p_weight = G.parameter(rng.uniform(-limit, limit, (in_dim, out_dim)))
        self.p_bias = G.parameter(np.zeros(out_dim))

    def __call__(self, x: G.Tensor) -> G.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"Linear expects trailing size {self.in_dim}, got shape {x.shape}"
            )
        return G.affine(x, self.p_weight, self.p_bias)


class MLP(Module):
    """Affine layers with an activation between them (none after the last)."""

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "elu",
        output_scale: float = 1.0,
    ):
        if len(sizes) < 2:
            raise ValueError(f"MLP needs at least input and output sizes: {sizes}")
        self.activation = activation
        count = len(sizes) - 1
        self.layers = [
            Linear(
                sizes[i],
                sizes[i + 1],
                rng,
                scale=output_scale if i == count - 1 else 1.0,
            )
            for i in range(count)
        ]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, x: G.Tensor) -> G.Tensor:
        act = ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return self.layers[-1](x)


class GRUCell(Module):
    """Gated recurrent cell; the update gate starts biased toward keeping h."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        self.reset_gate = Linear(input_dim + hidden_dim, hidden_dim, rng)
        self.update_gate = Linear(input_dim + hidden_dim, hidden_dim, rng)
        self.candidate = Linear(input_dim + hidden_dim, hidden_dim, rng)

    def __call__(self, x: G.Tensor, h: G.Tensor) -> G.Tensor:
        joint = G.concat([x, h], axis=-1)
        reset = G.sigmoid(self.reset_gate(joint))
        update = G.sigmoid(self.update_gate(joint) - 1.0)
        candidate = G.tanh(self.candidate(G.concat([x, reset * h], axis=-1)))
        return update * candidate + (1.0 - update) * h
