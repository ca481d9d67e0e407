from typing import List

from pydantic import BaseModel, Field


class WorldLosses(BaseModel):
    dyn: float
    align: float
    dec: float
    pred: float
    total: float
    kl_align: float = 0.0
    skipped: bool = False


class BehaviourLosses(BaseModel):
    actor: float
    critic_reward: float = Field(ge=0)
    critic_cost: float = Field(ge=0)
    entropy: float
    violation: float
    lagrange_multiplier: float = Field(ge=0)
    penalty_coefficient: float = Field(ge=0)
    skipped: bool = False


class EvaluationResult(BaseModel):
    mean_return: float
    mean_cost: float
    returns: List[float]
    costs: List[float]


METRICS_COLUMNS = [
    "env_step",
    "wall_time",
    "return",
    "cost_return",
    "loss_dyn",
    "loss_align",
    "loss_dec",
    "loss_pred",
    "loss_actor",
    "loss_critic_reward",
    "loss_critic_cost",
    "lagrange_multiplier",
    "penalty_coefficient",
    "entropy",
    "kl_align",
]


class MetricsRow(BaseModel):
    """One line of metrics.csv; losses are 0.0 until the first update."""

    env_step: int = Field(ge=0)
    wall_time: float = Field(default=0.0, ge=0)
    return_: float = Field(alias="return")
    cost_return: float = Field(ge=0)
    loss_dyn: float = 0.0
    loss_align: float = 0.0
    loss_dec: float = 0.0
    loss_pred: float = 0.0
    loss_actor: float = 0.0
    loss_critic_reward: float = 0.0
    loss_critic_cost: float = 0.0
    lagrange_multiplier: float = Field(default=0.0, ge=0)
    penalty_coefficient: float = 0.0
    entropy: float = 0.0
    kl_align: float = 0.0

    model_config = {"populate_by_name": True}

    def as_row(self) -> List[str]:
        """Fields in METRICS_COLUMNS order, floats as repr (locale independent)."""
        values = self.model_dump(by_alias=True)
        return [
            str(values[c]) if c == "env_step" else repr(float(values[c]))
            for c in METRICS_COLUMNS
        ]
