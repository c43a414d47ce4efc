"""Byte-for-byte comparison of short runs against checked-in CSVs.

Set SAFASIM_REGEN_GOLDEN=1 to rewrite the files after an intended change.
"""

import os
from pathlib import Path

import pytest

from safasim.config import RunConfig
from safasim.runner import run_experiment

GOLDEN = Path(__file__).parent / "golden"
CASES = {
    "regression_safa": ("regression", {"run.protocol": "safa"}),
    "regression_fedavg": ("regression", {"run.protocol": "fedavg"}),
    "regression_fedcs": ("regression", {"run.protocol": "fedcs"}),
    "regression_local": ("regression", {"run.protocol": "local"}),
    "classify_safa": ("synthetic-classify", {"run.protocol": "safa", "data.n": 600, "federation.m": 20}),
    "svm_safa_literal": ("synthetic-svm", {"run.protocol": "safa", "data.n": 600, "federation.m": 40,
                                           "timing.cap_mode": "literal", "federation.lag_tolerance": 2}),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_matches_golden(name, tmp_path):
    task, overrides = CASES[name]
    cfg = RunConfig.for_task(task, **{"run.rounds": 8, "federation.crash_prob": 0.4,
                                      "federation.C": 0.3, "run.master_seed": 11, **overrides})
    csv_path, _ = run_experiment(cfg, tmp_path)
    golden = GOLDEN / f"{name}.csv"
    if os.environ.get("SAFASIM_REGEN_GOLDEN"):
        golden.write_bytes(csv_path.read_bytes())
    assert csv_path.read_bytes() == golden.read_bytes()
