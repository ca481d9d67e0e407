"""
File: app/agents/lagrangian.py
Description: Constraint controllers turning the cost violation into an actor
penalty. The augmented Lagrangian uses the piecewise quadratic penalty with a
non-decreasing penalty coefficient; the PID controller sets a bounded
multiplier from the violation history.
"""

# Standard Library Imports
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple

# Third-Party Imports
from loguru import logger

# Internal Imports
from app.core import grad as G
from app.core.config import ConstraintConfig
from app.core.errors import ConfigurationError


def augmented_lagrangian(delta, lam: float, mu: float) -> Tuple[G.Tensor, float]:
    """
    Psi = lam * d + mu / 2 * d^2 and lam' = lam + mu * d while lam + mu * d >= 0;
    otherwise Psi = -lam^2 / (2 mu) and lam' = 0. Psi stays differentiable in d.
    """
    if mu <= 0.0:
        raise ConfigurationError(f"penalty coefficient must be > 0, got {mu}")
    if lam < 0.0:
        raise ConfigurationError(f"multiplier must be >= 0, got {lam}")
    delta = G.as_tensor(delta)
    candidate = lam + mu * float(delta.data.mean())
    if candidate >= 0.0:
        return lam * delta + (0.5 * mu) * G.square(delta), candidate
    return G.Tensor(-(lam * lam) / (2.0 * mu)), 0.0


@dataclass
class PIDState:
    kp: float = 0.01
    ki: float = 0.1
    kd: float = 0.01
    upper_bound: float = 0.75
    integral: float = 0.0
    previous: float = 0.0
    multiplier: float = 0.0


def pid_lagrangian(delta: float, state: PIDState) -> Tuple[float, PIDState]:
    """lam = clamp(kp * d + ki * I + kd * (d - d_prev), 0, bound), I <- max(0, I + d)."""
    integral = max(0.0, state.integral + delta)
    raw = state.kp * delta + state.ki * integral + state.kd * (delta - state.previous)
    multiplier = min(max(raw, 0.0), state.upper_bound)
    updated = PIDState(
        kp=state.kp,
        ki=state.ki,
        kd=state.kd,
        upper_bound=state.upper_bound,
        integral=integral,
        previous=delta,
        multiplier=multiplier,
    )
    return multiplier, updated


class LagrangeController(ABC):
    """Owns the multiplier state; one ``update`` per actor update."""

    mode: str = ""

    @abstractmethod
    def penalty(self, delta: G.Tensor) -> G.Tensor:
        """Psi(delta) under the current state."""
        pass

    @abstractmethod
    def penalty_slope(self, delta: float) -> float:
        """dPsi/d(delta) at ``delta``; weights the cost term of score-function gradients."""
        pass

    @abstractmethod
    def update(self, delta: float) -> float:
        """Advance the state on the measured violation; returns the new multiplier."""
        pass

    @property
    @abstractmethod
    def multiplier(self) -> float:
        pass

    @property
    def penalty_coefficient(self) -> float:
        return 0.0

    @abstractmethod
    def state_dict(self) -> Dict[str, Any]:
        pass

    @abstractmethod
    def load_state_dict(self, state: Dict[str, Any]) -> None:
        pass


class AugmentedLagrangian(LagrangeController):
    """mu grows as mu <- mu * (1 + nu) after every multiplier update."""

    mode = "augmented"

    def __init__(self, lambda_init: float, mu_init: float, nu: float):
        if mu_init <= 0.0:
            raise ConfigurationError(f"penalty coefficient must be > 0, got {mu_init}")
        self.lam = lambda_init
        self.mu = mu_init
        self.nu = nu

    def penalty(self, delta: G.Tensor) -> G.Tensor:
        psi, _ = augmented_lagrangian(delta, self.lam, self.mu)
        return psi

    def penalty_slope(self, delta: float) -> float:
        """dPsi/dd = max(0, lam + mu * d)."""
        return max(0.0, self.lam + self.mu * delta)

    def update(self, delta: float) -> float:
        _, self.lam = augmented_lagrangian(delta, self.lam, self.mu)
        self.mu *= 1.0 + self.nu
        return self.lam

    @property
    def multiplier(self) -> float:
        return self.lam

    @property
    def penalty_coefficient(self) -> float:
        return self.mu

    def state_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, "lam": self.lam, "mu": self.mu, "nu": self.nu}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.lam, self.mu, self.nu = state["lam"], state["mu"], state["nu"]


class PIDLagrangian(LagrangeController):
    """Psi = lam_p * delta with lam_p in [0, upper_bound]."""

    mode = "pid"

    def __init__(self, kp: float, ki: float, kd: float, upper_bound: float):
        self.state = PIDState(kp=kp, ki=ki, kd=kd, upper_bound=upper_bound)

    def penalty(self, delta: G.Tensor) -> G.Tensor:
        return self.state.multiplier * G.as_tensor(delta)

    def penalty_slope(self, delta: float) -> float:
        return self.state.multiplier

    def update(self, delta: float) -> float:
        multiplier, self.state = pid_lagrangian(delta, self.state)
        return multiplier

    @property
    def multiplier(self) -> float:
        return self.state.multiplier

    def state_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, **asdict(self.state)}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.state = PIDState(**{k: v for k, v in state.items() if k != "mode"})


def build_controller(config: ConstraintConfig) -> LagrangeController:
    if config.mode == "pid":
        controller = PIDLagrangian(config.kp, config.ki, config.kd, config.upper_bound)
    else:
        controller = AugmentedLagrangian(config.lambda_init, config.mu_init, config.nu)
    logger.debug(f"Constraint controller: {controller.mode}")
    return controller
