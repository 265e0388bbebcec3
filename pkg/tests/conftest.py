import os
import sys
from pathlib import Path

import pytest

_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(_ROOT / "src"))
# worker processes of the matrix runner import the package too
os.environ["PYTHONPATH"] = os.pathsep.join(filter(None, [str(_ROOT / "src"), os.environ.get("PYTHONPATH")]))

PROFILE_DIR = _ROOT / "config" / "profiles"
SCENARIO_DIR = _ROOT / "config" / "scenarios"


@pytest.fixture(scope="session")
def profile_dir() -> Path:
    return PROFILE_DIR


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIO_DIR
