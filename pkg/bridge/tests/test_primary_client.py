"""Integration through the consuming package's own command line.

The predbands CLI treats this server as an external rule; if that package
is not installed the whole module is skipped. The bridge is exercised the
way a user would wire it, via the rule string, with no imports of the
client package.
"""

import json
import shutil
import subprocess
import sys

import pytest

pytestmark = pytest.mark.skipif(
    shutil.which("predbands") is None, reason="predbands CLI not installed"
)

RULE = f"external:subprocess:{sys.executable} -m tabpfn_bridge --backend stub --ensemble 4 --seed 3"


def test_bands_pipeline_runs_against_the_bridge():
    proc = subprocess.run(
        ["predbands", "bands", "--dgp", "linear-probit-bins", "--n", "60",
         "--rule", RULE, "--grid=-5:5:3", "--seed", "2", "--format", "json"],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    out = json.loads(proc.stdout)
    assert out["n"] == 60
    for block in out["results"]:
        for band in (block["pointwise"], block["sup_t"]):
            for lo, c, hi in zip(band["lower"], band["center"], band["upper"]):
                assert 0.0 <= lo <= c <= hi <= 1.0


def test_client_rejects_nothing_from_a_clean_run():
    # an entropy profile walks many prefixes through predict_batch
    proc = subprocess.run(
        ["predbands", "entropy", "--dgp", "linear-probit-bins", "--n", "40",
         "--rule", RULE, "--grid=-4:4:3", "--seed", "5"],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    header, *rows = proc.stdout.strip().splitlines()
    assert header.startswith("x,")
    assert len(rows) == 3
