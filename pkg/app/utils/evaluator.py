"""
File: app/utils/evaluator.py
Description: Multi-run comparison report. Summarises the metrics files of
several training runs (variants x seeds) and checks the directional
training outcomes: the cost budget, full vs unprivileged return and the
alignment KL reduction.
"""

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from loguru import logger

from app.utils.metrics import read_metrics

FINAL_EVALS = 10
BUDGET_SLACK = 0.5


@dataclass
class RunSummary:
    """Final-window metrics of one training run."""

    variant: str
    seed: int
    final_return: float
    final_cost: float
    initial_kl: float
    final_kl: float
    env_steps: int

    @property
    def kl_ratio(self) -> Optional[float]:
        if self.initial_kl <= 0.0:
            return None
        return self.final_kl / self.initial_kl


@dataclass
class ComparisonReport:
    runs: List[RunSummary]
    by_variant: Dict[str, Dict[str, Any]]
    budget: float
    budget_ok: Optional[bool]
    full_beats_unprivileged: Optional[bool]
    kl_reduced: Optional[bool]
    timestamp: str


class Evaluator:
    """Builds, prints and saves comparison reports across runs."""

    @staticmethod
    def summarize_run(
        metrics_path: Union[str, Path], variant: str, seed: int
    ) -> RunSummary:
        """
        Means over the last FINAL_EVALS rows. The KL endpoints use the first
        row that has a world update (non-zero kl_align) and the last row.
        """
        rows = read_metrics(metrics_path)
        if not rows:
            raise ValueError(f"{metrics_path} has no metrics rows")
        tail = rows[-FINAL_EVALS:]
        kl = [float(r["kl_align"]) for r in rows]
        trained = [value for value in kl if value != 0.0]
        return RunSummary(
            variant=variant,
            seed=seed,
            final_return=float(np.mean([float(r["return"]) for r in tail])),
            final_cost=float(np.mean([float(r["cost_return"]) for r in tail])),
            initial_kl=trained[0] if trained else 0.0,
            final_kl=kl[-1],
            env_steps=int(rows[-1]["env_step"]),
        )

    @staticmethod
    def generate_report(runs: List[RunSummary], budget: float) -> ComparisonReport:
        grouped = defaultdict(list)
        for run in runs:
            grouped[run.variant].append(run)

        by_variant = {}
        for variant, members in grouped.items():
            ratios = [m.kl_ratio for m in members if m.kl_ratio is not None]
            by_variant[variant] = {
                "runs": len(members),
                "seeds": sorted(m.seed for m in members),
                "mean_return": round(float(np.mean([m.final_return for m in members])), 4),
                "mean_cost": round(float(np.mean([m.final_cost for m in members])), 4),
                "mean_kl_ratio": round(float(np.mean(ratios)), 4) if ratios else None,
            }

        full = by_variant.get("full")
        unprivileged = by_variant.get("unprivileged")
        budget_ok = full["mean_cost"] <= budget + BUDGET_SLACK if full else None
        beats = (
            full["mean_return"] >= unprivileged["mean_return"]
            if full and unprivileged
            else None
        )
        kl_reduced = (
            full["mean_kl_ratio"] < 0.5
            if full and full["mean_kl_ratio"] is not None
            else None
        )
        return ComparisonReport(
            runs=runs,
            by_variant=by_variant,
            budget=budget,
            budget_ok=budget_ok,
            full_beats_unprivileged=beats,
            kl_reduced=kl_reduced,
            timestamp=datetime.now().isoformat(),
        )

    @staticmethod
    def print_report(report: ComparisonReport) -> None:
        """Pretty-print the comparison report."""
        print("\n" + "=" * 80)
        print("PRIVILEGED WORLD-MODEL LAB - RUN COMPARISON")
        print("=" * 80)
        print(f"\nTimestamp: {report.timestamp}")
        print(f"Runs: {len(report.runs)}   Budget: {report.budget}")

        print("\n" + "-" * 80)
        print("BY VARIANT (mean over the last evaluations)")
        print("-" * 80)
        for variant, metrics in report.by_variant.items():
            print(f"\n  {variant.upper()} ({metrics['runs']} runs, seeds {metrics['seeds']})")
            print(f"    - Return:                  {metrics['mean_return']}")
            print(f"    - Cost return:             {metrics['mean_cost']}")
            print(f"    - KL final / initial:      {metrics['mean_kl_ratio']}")

        print("\n" + "-" * 80)
        print("CHECKS")
        print("-" * 80)
        print(f"  Cost within budget + {BUDGET_SLACK}:     {report.budget_ok}")
        print(f"  Full >= unprivileged return:  {report.full_beats_unprivileged}")
        print(f"  Alignment KL halved:          {report.kl_reduced}")
        print("\n" + "=" * 80)

    @staticmethod
    def save_report_json(report: ComparisonReport, filepath: Union[str, Path]) -> None:
        report_dict = {
            "timestamp": report.timestamp,
            "budget": report.budget,
            "checks": {
                "budget_ok": report.budget_ok,
                "full_beats_unprivileged": report.full_beats_unprivileged,
                "kl_reduced": report.kl_reduced,
            },
            "by_variant": report.by_variant,
            "runs": [asdict(run) for run in report.runs],
        }
        Path(filepath).parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(report_dict, f, indent=2)
        logger.info(f"Report saved to: {filepath}")
