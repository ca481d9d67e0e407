"""
File: app/utils/metrics.py
Description: Append-only metrics CSV with a fixed header order.
"""

# Standard Library Imports
import csv
from pathlib import Path
from typing import Dict, List, Union

# Third-Party Imports
from loguru import logger

# Internal Imports
from app.agents.schemas import METRICS_COLUMNS, MetricsRow


class MetricsWriter:
    """Writes the header once; every row is flushed as soon as it is appended."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.last_step = -1
        if not self.path.exists():
            with self.path.open("w", newline="", encoding="utf-8") as handle:
                csv.writer(handle).writerow(METRICS_COLUMNS)
        else:
            rows = read_metrics(self.path)
            if rows:
                self.last_step = int(rows[-1]["env_step"])

    def append(self, row: MetricsRow) -> None:
        if row.env_step <= self.last_step:
            raise ValueError(
                f"metrics rows must advance: step {row.env_step} after {self.last_step}"
            )
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(row.as_row())
        self.last_step = row.env_step
        logger.debug(f"Metrics row at step {row.env_step} appended to {self.path}")

    def truncate_after(self, env_step: int) -> None:
        """Drops rows beyond ``env_step`` (used when resuming from a checkpoint)."""
        kept = [r for r in read_metrics(self.path) if int(r["env_step"]) <= env_step]
        with self.path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(METRICS_COLUMNS)
            for row in kept:
                writer.writerow([row[c] for c in METRICS_COLUMNS])
        self.last_step = int(kept[-1]["env_step"]) if kept else -1


def read_metrics(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValueError(f"unexpected metrics header in {path}: {reader.fieldnames}")
        return list(reader)


def metric_series(path: Union[str, Path], column: str) -> List[float]:
    return [float(row[column]) for row in read_metrics(path)]
