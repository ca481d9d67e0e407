"""
File: app/utils/loader.py
Description: Path lookup for bundled run configs and test fixture instances,
resolved from the project root rather than the working directory.
"""

from functools import lru_cache
from pathlib import Path


@lru_cache(maxsize=1)
def project_root() -> Path:
    """First ancestor of this module that holds a ``configs`` or ``tests`` folder."""
    current_path = Path(__file__).resolve()
    for parent in current_path.parents:
        if (parent / "configs").is_dir() or (parent / "tests").is_dir():
            return parent
    return current_path.parents[2]


def _existing(path: Path, kind: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{kind} not found at: {path.absolute()}")
    return path


def fixture_path(filename: str) -> Path:
    """A tabular instance or other fixture under tests/fixtures."""
    return _existing(project_root() / "tests" / "fixtures" / filename, "Fixture")


def config_path(name: str) -> Path:
    """A bundled run config; ``smoke`` and ``smoke.json`` both resolve."""
    filename = name if name.endswith(".json") else f"{name}.json"
    return _existing(project_root() / "configs" / filename, "Config")
