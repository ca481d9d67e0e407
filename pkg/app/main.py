"""
File: app/main.py
Description: Command-line entry point. Trains and evaluates agents, runs the
value-dominance and backup-growth verification suites, and exports gridworlds
as tabular instances.

Exit codes: 0 ok, 1 configuration error, 2 verification violation,
3 runtime failure.
"""

# Load environment variables from .env file
from dotenv import load_dotenv

load_dotenv()

# Standard Library Imports
import argparse
import sys
from pathlib import Path
from typing import List, Optional

# Third-Party Imports
import numpy as np
from loguru import logger
from pydantic import ValidationError

# Internal Imports
from app.agents.evaluation import evaluate
from app.agents.trainer import PIGAgent, train
from app.core.config import (
    AblationConfig,
    Settings,
    load_env_config,
    load_run_config,
)
from app.core.errors import CheckpointError, ConfigurationError
from app.envs.export import export_tabular, monte_carlo_check
from app.solver.alpha import witness_beliefs
from app.solver.generator import InstanceGenerator
from app.solver.tabular import save_instance
from app.solver.verifier import (
    run_growth_suite,
    run_suite,
    verify_value_dominance,
    write_report_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2
EXIT_RUNTIME = 3

CROSS_CHECK_TOLERANCE = 0.02

# Aliases name what each suite checks
SUITES = ["theorem1", "lemma2", "gridworld-cross-check"]
SUITE_ALIASES = {"dominance": "theorem1", "growth": "lemma2"}


def configure_logging(settings: Settings, log_file: Optional[Path] = None) -> None:
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level.upper())
    if log_file is not None:
        logger.add(log_file, level="DEBUG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pig-lab", description="Privileged-information world-model lab"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_cmd = commands.add_parser("train", help="train an agent")
    train_cmd.add_argument("--config", required=True, type=Path)
    train_cmd.add_argument("--seed", type=int)
    train_cmd.add_argument(
        "--ablation", choices=["full", "no_align", "unprivileged", "informed_style"]
    )
    train_cmd.add_argument("--out", type=Path, help="run directory")
    train_cmd.add_argument("--resume", type=Path, help="checkpoint to resume from")

    eval_cmd = commands.add_parser("eval", help="evaluate a checkpoint")
    eval_cmd.add_argument("--checkpoint", required=True, type=Path)
    eval_cmd.add_argument("--episodes", type=int, default=10)
    eval_cmd.add_argument("--seed", type=int, default=0)
    eval_cmd.add_argument("--greedy", action="store_true")
    eval_cmd.add_argument("--log-dir", type=Path, help="per-episode CSV logs")

    verify_cmd = commands.add_parser("verify", help="run a verification suite")
    verify_cmd.add_argument("suite", choices=[*SUITES, *SUITE_ALIASES])
    verify_cmd.add_argument("--instances", type=int)
    verify_cmd.add_argument("--out", type=Path, help="CSV margin report")
    verify_cmd.add_argument("--horizon", type=int)
    verify_cmd.add_argument("--beliefs", type=int, default=1000)
    verify_cmd.add_argument("--seed", type=int, default=0)
    verify_cmd.add_argument("--workers", type=int, default=1)
    verify_cmd.add_argument("--config", type=Path, help="gridworld config")
    verify_cmd.add_argument("--trials", type=int, default=2000)

    export_cmd = commands.add_parser("env-export", help="export a gridworld as JSON")
    export_cmd.add_argument("--config", required=True, type=Path)
    export_cmd.add_argument("--out", required=True, type=Path)
    export_cmd.add_argument("--gamma", type=float, default=0.95)
    return parser


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    config = load_run_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.ablation is not None:
        updates["ablation"] = AblationConfig.from_name(args.ablation)
    config = config.model_copy(update=updates)
    variant = config.ablation.variant

    run_dir = args.out or settings.output_dir / f"{config.name}-{variant}-seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    configure_logging(settings, run_dir / "train.log")
    (run_dir / "config.json").write_text(
        config.model_dump_json(indent=2), encoding="utf-8"
    )
    artifacts = train(config, run_dir, resume_from=args.resume)
    logger.success(f"Artifacts in {artifacts.run_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    agent = PIGAgent.from_checkpoint(args.checkpoint)
    privileged_calls = (
        agent.world.privileged.forward_calls if agent.world.privileged else 0
    )
    result = evaluate(
        agent.eval_env,
        agent.behaviour.actor,
        agent.world,
        args.episodes,
        seed=args.seed,
        greedy=args.greedy,
        log_dir=args.log_dir,
    )
    after = agent.world.privileged.forward_calls if agent.world.privileged else 0
    if agent.eval_env.privileged_reads or after != privileged_calls:
        logger.critical("Evaluation touched privileged information")
        return EXIT_RUNTIME
    print(result.model_dump_json(indent=2))
    return EXIT_OK


def _suite_exit(failures: int, skipped: int, out: Path) -> int:
    logger.info(f"Report: {out} ({skipped} instance(s) skipped)")
    return EXIT_VIOLATION if failures else EXIT_OK


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    suite = SUITE_ALIASES.get(args.suite, args.suite)
    out = args.out or settings.output_dir / f"{suite}.csv"

    if suite == "theorem1":
        instances = InstanceGenerator.generate_suite(args.instances or 100, args.seed)
        result = run_suite(
            instances,
            args.horizon or 6,
            num_beliefs=args.beliefs,
            seed=args.seed,
            workers=args.workers,
        )
        write_report_csv(result.reports, out)
        return _suite_exit(result.violations, result.skipped, out)

    if suite == "lemma2":
        instances = InstanceGenerator.generate_suite(
            args.instances or 20,
            args.seed,
            fully_observable_every=5,
            num_actions=2,
            num_observations=2,
        )
        result = run_growth_suite(
            instances, args.horizon or 3, num_beliefs=min(args.beliefs, 100), seed=args.seed
        )
        write_report_csv(result.reports, out)
        return _suite_exit(result.failures, result.skipped, out)

    if args.config is None:
        raise ConfigurationError("gridworld-cross-check needs --config")
    env_config = load_env_config(args.config)
    exported = export_tabular(env_config)
    check = monte_carlo_check(
        env_config, exported, args.trials, np.random.default_rng(args.seed)
    )
    logger.info(
        f"Cross-check: transition TV {check.transition_tv:.4f}, "
        f"observation TV {check.observation_tv:.4f} over {check.pairs} pairs"
    )
    beliefs = witness_beliefs(
        exported.model.num_states, args.beliefs, np.random.default_rng(args.seed)
    )
    report = verify_value_dominance(
        exported.model, args.horizon or 3, beliefs, instance_id="gridworld"
    )
    write_report_csv([report], out)
    mismatch = max(check.transition_tv, check.observation_tv) >= CROSS_CHECK_TOLERANCE
    if mismatch:
        logger.error("Exported model disagrees with the simulator")
    return _suite_exit(report.violations + int(mismatch), 0, out)


def cmd_env_export(args: argparse.Namespace, settings: Settings) -> int:
    exported = export_tabular(load_env_config(args.config), gamma=args.gamma)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(exported.model, args.out)
    logger.success(
        f"Exported {exported.model.num_states} states and "
        f"{exported.model.num_observations} observations to {args.out}"
    )
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "env-export": cmd_env_export,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    configure_logging(settings)
    try:
        return COMMANDS[args.command](args, settings)
    except (ConfigurationError, ValidationError, FileNotFoundError, CheckpointError) as exc:
        logger.error(f"{args.command}: {exc}")
        return EXIT_CONFIG
    except Exception as exc:
        logger.critical(f"{args.command} failed: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
