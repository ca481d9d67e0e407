#!/usr/bin/env python3
"""
File: run_evaluation.py
Description: End-to-end comparison script. Trains the full agent and the
unprivileged variant on the smoke config over several seeds, then prints and
saves the comparison report.
Run with: python run_evaluation.py [num_seeds] [total_env_steps]
"""

import sys

from dotenv import load_dotenv
from loguru import logger

from app.agents.trainer import train
from app.core.config import AblationConfig, Settings, load_run_config
from app.utils.evaluator import Evaluator
from app.utils.loader import config_path

# Load environment variables from .env file
load_dotenv()

VARIANTS = ("full", "unprivileged")


def run_evaluation(num_seeds: int = 5, total_env_steps: int = 100_000):
    """
    Train every (variant, seed) pair and compare them.

    Args:
        num_seeds: Seeds 0 .. num_seeds - 1 per variant
        total_env_steps: Training length of each run
    """
    print("\n" + "=" * 80)
    print("PRIVILEGED WORLD-MODEL LAB - COMPARISON RUNNER")
    print("=" * 80)

    settings = Settings()
    base = load_run_config(config_path("smoke"))
    base = base.model_copy(
        update={
            "training": base.training.model_copy(
                update={"total_env_steps": total_env_steps, "record_wall_time": False}
            )
        }
    )
    out_root = settings.output_dir / "comparison"

    summaries = []
    jobs = [(variant, seed) for variant in VARIANTS for seed in range(num_seeds)]
    print(f"\n[1/2] Training {len(jobs)} runs of {total_env_steps} env steps...")
    for i, (variant, seed) in enumerate(jobs, 1):
        config = base.model_copy(
            update={"seed": seed, "ablation": AblationConfig.from_name(variant)}
        )
        try:
            artifacts = train(config, out_root / f"{variant}-seed{seed}")
            summaries.append(
                Evaluator.summarize_run(artifacts.metrics_path, variant, seed)
            )
            print(f"  [{i}/{len(jobs)}] ✓ {variant} seed {seed}")
        except Exception as e:
            logger.error(f"{variant} seed {seed} failed: {e}")
            print(f"  [{i}/{len(jobs)}] ✗ {variant} seed {seed} - Error: {str(e)[:50]}")

    print("\n[2/2] Generating comparison report...")
    report = Evaluator.generate_report(summaries, budget=base.env.budget)
    Evaluator.print_report(report)
    Evaluator.save_report_json(report, out_root / "comparison_report.json")
    print("\n✓ Comparison complete!")
    return report


if __name__ == "__main__":
    num_seeds, steps = 5, 100_000
    if len(sys.argv) > 1:
        try:
            num_seeds = int(sys.argv[1])
            steps = int(sys.argv[2]) if len(sys.argv) > 2 else steps
        except ValueError:
            print("Usage: python run_evaluation.py [num_seeds] [total_env_steps]")
            print("Default: 5 seeds, 100000 env steps")

    run_evaluation(num_seeds, steps)
