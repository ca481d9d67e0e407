"""
File: app/core/optim.py
Description: Adam with bias correction and global-norm gradient clipping.
Steps whose gradients contain NaN/inf are skipped and counted.
"""

# Standard Library Imports
from typing import Dict, List, Optional, Sequence

# Third-Party Imports
import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

# Internal Imports
from app.core.grad import Tensor


class OptimizerConfig(BaseModel):
    lr: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    clip_norm: Optional[float] = Field(default=40.0, gt=0)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


class Adam:
    """Adam over a fixed list of parameter tensors."""

    def __init__(
        self, params: Sequence[Tensor], config: OptimizerConfig, name: str = "adam"
    ):
        self.params: List[Tensor] = list(params)
        self.config = config
        self.name = name
        self.steps = 0
        self.skipped_steps = 0
        self.last_grad_norm = 0.0
        self.last_applied_norm = 0.0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        """Apply one update from the accumulated ``.grad``; False if skipped."""
        grads = [
            np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params
        ]
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped_steps += 1
            logger.warning(
                f"{self.name}: non-finite gradient, step skipped "
                f"({self.skipped_steps} so far)"
            )
            return False

        norm = global_norm(grads)
        self.last_grad_norm = norm
        clip = self.config.clip_norm
        if clip is not None and norm > clip:
            grads = [g * (clip / norm) for g in grads]
            norm = clip
        self.last_applied_norm = norm

        cfg = self.config
        self.steps += 1
        correction1 = 1.0 - cfg.beta1**self.steps
        correction2 = 1.0 - cfg.beta2**self.steps
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self._m[i] = cfg.beta1 * self._m[i] + (1.0 - cfg.beta1) * g
            self._v[i] = cfg.beta2 * self._v[i] + (1.0 - cfg.beta2) * g * g
            m_hat = self._m[i] / correction1
            v_hat = self._v[i] / correction2
            p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return True

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {
            "steps": np.array(self.steps, dtype=np.float64),
            "skipped_steps": np.array(self.skipped_steps, dtype=np.float64),
        }
        for i, (m, v) in enumerate(zip(self._m, self._v)):
            state[f"m.{i}"] = m.copy()
            state[f"v.{i}"] = v.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.steps = int(state["steps"])
        self.skipped_steps = int(state["skipped_steps"])
        self._m = [np.array(state[f"m.{i}"]) for i in range(len(self.params))]
        self._v = [np.array(state[f"v.{i}"]) for i in range(len(self.params))]
