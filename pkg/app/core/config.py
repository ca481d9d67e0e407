"""
File: app/core/config.py
Description: Run configuration (pydantic models with validated defaults),
the config hash stamped into every artifact, and process settings read from
PIG_* environment variables.
"""

# Standard Library Imports
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

# Third-Party Imports
from loguru import logger
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Internal Imports
from app.core.errors import ConfigurationError
from app.core.optim import OptimizerConfig
from app.envs.gridworld import GridWorldConfig


class ModelConfig(BaseModel):
    groups: int = Field(default=8, ge=1)
    classes: int = Field(default=8, ge=2)
    deter: int = Field(default=128, ge=1)
    embed: int = Field(default=64, ge=1)
    hidden: int = Field(default=128, ge=1)
    predictor_inputs: Literal["star_plus", "star_minus"] = "star_plus"
    detach_zplus_in_oracle: bool = False


class LossConfig(BaseModel):
    alpha: float = Field(default=0.1, ge=0)
    beta: float = Field(default=0.5, ge=0)
    free_bits: float = Field(default=1.0, ge=0)
    dyn_order: Literal["prior_first", "posterior_first"] = "prior_first"
    beta_obs: float = Field(default=1.0, ge=0)
    beta_reward: float = Field(default=1.0, ge=0)
    beta_cost: float = Field(default=1.0, ge=0)


class ActorCriticConfig(BaseModel):
    horizon: int = Field(default=15, ge=1)
    gamma: float = Field(default=0.997, ge=0, le=1)
    lambda_reward: float = Field(default=0.95, ge=0, le=1)
    lambda_cost: float = Field(default=0.95, ge=0, le=1)
    entropy: float = Field(default=3e-4, ge=0)
    entropy_literal_sign: bool = False
    slow_critic_tau: float = Field(default=0.005, gt=0, le=1)
    gradient: Literal["dynamics", "reinforce"] = "dynamics"
    hidden: int = Field(default=128, ge=1)
    actor_optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(lr=3e-5)
    )
    critic_optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(lr=3e-5)
    )


class ConstraintConfig(BaseModel):
    mode: Literal["augmented", "pid"] = "augmented"
    signal: Literal["imagined", "measured"] = "imagined"
    lambda_init: float = Field(default=0.01, ge=0)
    mu_init: float = Field(default=1e-6, gt=0)
    nu: float = Field(default=5e-9, ge=0)
    kp: float = 0.01
    ki: float = 0.1
    kd: float = 0.01
    upper_bound: float = Field(default=0.75, ge=0)
    measured_window: int = Field(default=10, ge=1)


class TrainingConfig(BaseModel):
    total_env_steps: int = Field(default=30_000, ge=0)
    train_ratio: float = Field(default=64.0, gt=0)
    batch_size: int = Field(default=16, ge=1)
    batch_length: int = Field(default=16, ge=1)
    prefill_steps: int = Field(default=1_000, ge=0)
    replay_capacity: int = Field(default=100_000, ge=1)
    eval_interval: int = Field(default=5_000, ge=1)
    eval_episodes: int = Field(default=10, ge=1)
    checkpoint_interval: Optional[int] = Field(default=None, ge=1)
    record_wall_time: bool = True
    world_optimizer: OptimizerConfig = Field(
        default_factory=lambda: OptimizerConfig(lr=1e-4)
    )


class AblationConfig(BaseModel):
    no_align: bool = False
    unprivileged: bool = False
    informed_style: bool = False

    @property
    def variant(self) -> str:
        chosen = [
            name
            for name in ("no_align", "unprivileged", "informed_style")
            if getattr(self, name)
        ]
        if len(chosen) > 1:
            raise ConfigurationError(f"conflicting ablation flags: {chosen}")
        return chosen[0] if chosen else "full"

    @classmethod
    def from_name(cls, name: str) -> "AblationConfig":
        if name == "full":
            return cls()
        if name not in cls.model_fields:
            raise ConfigurationError(f"unknown ablation '{name}'")
        return cls(**{name: True})


class RunConfig(BaseModel):
    name: str = "pig"
    seed: int = 0
    env: GridWorldConfig = Field(default_factory=GridWorldConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    actor_critic: ActorCriticConfig = Field(default_factory=ActorCriticConfig)
    constraint: ConstraintConfig = Field(default_factory=ConstraintConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    config = RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
    logger.info(f"Loaded run config {path} (hash {config.config_hash()[:12]})")
    return config


class Settings(BaseSettings):
    """Process settings; PIG_OUTPUT_DIR and PIG_LOG_LEVEL."""

    model_config = SettingsConfigDict(env_prefix="PIG_", env_file=".env", extra="ignore")

    output_dir: Path = Path("runs")
    log_level: str = "INFO"


def load_env_config(path: Union[str, Path]) -> GridWorldConfig:
    """Reads a gridworld config, either bare or as the ``env`` of a run config."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if "env" in data:
        return RunConfig.model_validate(data).env
    return GridWorldConfig.model_validate(data)
