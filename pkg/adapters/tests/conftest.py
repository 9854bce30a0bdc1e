import subprocess
import sys
from pathlib import Path

import pytest

SAMPLE5 = Path(__file__).parent / "data" / "sample5"


def run_upk(args, cwd=None):
    """Drive the primary toolkit the only sanctioned way: its CLI."""
    return subprocess.run([sys.executable, "-m", "upk.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="session")
def sample5() -> Path:
    assert SAMPLE5.is_dir(), "checked-in sample frames missing"
    return SAMPLE5
