"""
Environment Settings

Process-level settings read from the environment (and an optional .env file).
CLI flags take precedence over everything here.
"""

import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

# Load .env file
load_dotenv()

REPO_ROOT = Path(__file__).resolve().parents[2]


@dataclass(frozen=True)
class Settings:
    """Resolved environment settings."""

    log_level: str
    profile_dir: Path
    output_dir: Path
    parallel: int


def get_settings() -> Settings:
    """
    Read settings from the environment.

    Returns:
        Settings with defaults applied
    """
    parallel = int(os.getenv("OEC_SIM_PARALLEL", "1"))
    return Settings(
        log_level=os.getenv("OEC_SIM_LOG_LEVEL", "INFO").upper(),
        profile_dir=Path(os.getenv("OEC_SIM_PROFILE_DIR", REPO_ROOT / "config" / "profiles")),
        output_dir=Path(os.getenv("OEC_SIM_OUTPUT_DIR", "./outputs")),
        parallel=max(parallel, 1),
    )
