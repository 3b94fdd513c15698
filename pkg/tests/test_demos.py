"""Each demo script must run cleanly end to end."""

import os
import subprocess
import sys

import pytest

DEMO_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "demos")
DEMOS = sorted(f for f in os.listdir(DEMO_DIR) if f.endswith(".py"))


@pytest.mark.parametrize("name", DEMOS)
def test_demo_runs(name):
    proc = subprocess.run([sys.executable, os.path.join(DEMO_DIR, name)],
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr[-2000:]
    assert proc.stdout.strip()
