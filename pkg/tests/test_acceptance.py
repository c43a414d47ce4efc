"""End-to-end acceptance criteria with pinned tolerances.

Each criterion prints one ``[PASS]`` or ``[FAIL]`` line. Under pytest the
lines appear in the normal output (``pytest tests/test_acceptance.py -v``);
``python3 tests/test_acceptance.py`` prints them without pytest.

Criterion 6(c) cannot hold for the model as specified: the converged
Case-2 bias at cr = 0.3 is (2 - cr) / (1 + cr - cr^2) ~ 1.405, above the
FedAvg value of 1. Its test is an expected failure (strict), so it is
reported as FAIL and the suite turns red if it ever starts passing.
"""

from __future__ import annotations

import functools
import math
import statistics
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from safasim.bias import (BiasCase, BiasParams, bias_fedavg, bias_monte_carlo, bias_safa_recurrence,
                          default_case_fractions, discrepancy_table)
from safasim.config import RunConfig
from safasim.metrics import eur_theoretical
from safasim.runner import build_dataset, build_simulation, run_bias_analysis

pytestmark = pytest.mark.acceptance

# -- pinned targets and tolerances ------------------------------------------------

EUR_TOL = 0.05
SR_TARGET = {0.1: 0.90, 0.3: 0.70, 0.5: 0.51, 0.7: 0.34}
SR_TOL = 0.03
STALL_FRACTION = 0.99
STALL_MEAN, STALL_TOL = 5606.12, 1.0
TDIST_REL_TOL = 0.02
TDIST_REFERENCE = {0.1: (181.49, 182.32), 0.3: (141.91, 142.89), 0.5: (104.38, 105.34), 0.7: (70.05, 70.63)}
FEDAVG_FUTILITY_TOL = 0.05
SAFA_FUTILITY_MAX = 0.05
BIAS_MC_TRIALS = 100_000
BIAS_P_TOL = 0.02
BIAS_ROUNDS = 50
EQUIV_ROUNDS = 20
ACCURACY_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class Result:
    criterion: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.criterion}: {self.detail}"


def run_summary(task, **overrides):
    cfg = RunConfig.for_task(task, **overrides)
    sim = build_simulation(cfg, _dataset(task))
    sim.run(cfg.run.rounds)
    return sim


@functools.lru_cache(maxsize=None)
def _dataset(task):
    return build_dataset(RunConfig.for_task(task))


@functools.lru_cache(maxsize=None)
def _svm_safa(cr, C):
    return run_summary("svm", **{"run.protocol": "safa", "federation.C": C, "federation.crash_prob": cr,
                                 "federation.lag_tolerance": 5, "run.rounds": 100}).summary()


# -- criteria -------------------------------------------------------------------

def criterion_1() -> Result:
    """Mean empirical EUR tracks min(C, 1 - cr)."""
    worst, parts = 0.0, []
    for C in (0.1, 0.5, 1.0):
        for cr in (0.3, 0.7):
            s = run_summary("synthetic-classify", **{"run.protocol": "safa", "federation.m": 100,
                                                     "federation.C": C, "federation.crash_prob": cr,
                                                     "federation.lag_tolerance": 5, "run.rounds": 100}).summary()
            gap = abs(s.mean_eur - eur_theoretical(C, cr))
            worst = max(worst, gap)
            parts.append(f"C={C},cr={cr}:{s.mean_eur:.3f}")
    return Result("1 EUR law", worst <= EUR_TOL,
                  f"max |EUR - min(C,1-cr)| = {worst:.4f} (tol {EUR_TOL}); " + " ".join(parts))


def criterion_2() -> Result:
    """SAFA sync ratio per crash rate, m=500, tau=5, 100 rounds, checked at C=0.1 and C=1.0."""
    worst, parts = 0.0, []
    for cr, target in SR_TARGET.items():
        for C in (0.1, 1.0):
            sr = _svm_safa(cr, C).sync_ratio
            worst = max(worst, abs(sr - target))
        parts.append(f"cr={cr}:{sr:.3f}(target {target})")
    return Result("2 SR vs crash rate", worst <= SR_TOL,
                  f"max |SR - target| = {worst:.4f} (tol {SR_TOL}); " + " ".join(parts))


def criterion_3() -> Result:
    """FedAvg waits out T_lim whenever a selected client crashes."""
    sim = run_summary("classify", **{"run.protocol": "fedavg", "federation.m": 100, "federation.C": 0.3,
                                     "federation.crash_prob": 0.3, "timing.t_lim": 5600.0,
                                     "timing.per_model_dist_time": 0.204, "run.rounds": 100})
    lengths = np.array([r.round_length for r in sim.reports])
    stalled = np.array([math.isclose(r.round_length, 5600.0 + r.t_dist, rel_tol=0, abs_tol=1e-9)
                        for r in sim.reports])
    frac, mean = stalled.mean(), lengths.mean()
    ok = frac >= STALL_FRACTION and abs(mean - STALL_MEAN) <= STALL_TOL
    return Result("3 FedAvg stall", ok,
                  f"stalled rounds {frac:.2%} (need >= {STALL_FRACTION:.0%}); mean length {mean:.2f} s "
                  f"(target {STALL_MEAN} +/- {STALL_TOL})")


def criterion_4() -> Result:
    """Mean T_dist equals SR * m * 0.404 for each crash-rate row."""
    worst, parts = 0.0, []
    for cr in SR_TARGET:
        for C in (0.1, 1.0):
            s = _svm_safa(cr, C)
            expected = s.sync_ratio * 500 * 0.404
            worst = max(worst, abs(s.mean_t_dist - expected) / expected)
        lo, hi = TDIST_REFERENCE[cr]
        parts.append(f"cr={cr}:{s.mean_t_dist:.2f}s(reference {lo}-{hi})")
    return Result("4 T_dist/SR consistency", worst <= TDIST_REL_TOL,
                  f"max relative gap {worst:.2e} (tol {TDIST_REL_TOL}); " + " ".join(parts))


def criterion_5() -> Result:
    """FedAvg futility ~ cr/2; SAFA futility small at cr=0.7."""
    worst, parts = 0.0, []
    for cr in SR_TARGET:
        fut = run_summary("svm", **{"run.protocol": "fedavg", "federation.C": 0.1, "federation.crash_prob": cr,
                                    "run.rounds": 100}).summary().futility
        worst = max(worst, abs(fut - cr / 2))
        parts.append(f"cr={cr}:{fut:.3f}")
    safa = _svm_safa(0.7, 0.1).futility
    ok = worst <= FEDAVG_FUTILITY_TOL and safa <= SAFA_FUTILITY_MAX
    return Result("5 futility", ok,
                  f"FedAvg max |fut - cr/2| = {worst:.4f} (tol {FEDAVG_FUTILITY_TOL}) [{' '.join(parts)}]; "
                  f"SAFA cr=0.7 fut = {safa:.4f} (max {SAFA_FUTILITY_MAX})")


def criterion_6a() -> Result:
    grid = [(a, b) for a in (0.0, 0.1, 0.3, 0.5, 0.9) for b in (0.0, 0.2, 0.3, 0.7)]
    bad = []
    for cr_a, cr_b in grid:
        trace = bias_safa_recurrence(BiasParams(0.95, 0.05, cr_a, cr_b, BIAS_ROUNDS))
        if not np.all(trace.bias == (1 - cr_a) / (1 - cr_b)):
            bad.append((cr_a, cr_b))
    return Result("6(a) Case1 bias exact", not bad,
                  f"{len(grid) - len(bad)}/{len(grid)} (cr_A, cr_B) pairs equal (1-cr_A)/(1-cr_B) in every round")


def criterion_6b(report_path=None) -> Result:
    cr = 0.3
    fr = default_case_fractions(cr)
    parts, worst = [], 0.0
    for case in (BiasCase.CASE2, BiasCase.CASE3):
        p = BiasParams(fr[case], cr, cr, cr, BIAS_ROUNDS)
        d = discrepancy_table(bias_safa_recurrence(p), mc := bias_monte_carlo(p, BIAS_MC_TRIALS, seed=2024))
        gap = max(d["dP_A"].max(), d["dP_B"].max())
        worst = max(worst, gap)
        z = (d["dbias"][1:] / mc.se_bias[1:]).max()
        parts.append(f"{case.value}: max dP={gap:.4f}, max bias z={z:.2f}")
    if report_path is not None:
        params = [BiasParams(fr[c], cr, cr, cr, BIAS_ROUNDS) for c in (BiasCase.CASE2, BiasCase.CASE3)]
        run_bias_analysis(params, report_path, BIAS_MC_TRIALS, seed=2024)
        parts.append(f"report {report_path}")
    return Result("6(b) recurrence vs Monte-Carlo", worst <= BIAS_P_TOL,
                  f"{BIAS_MC_TRIALS} trials, r<={BIAS_ROUNDS}, tol {BIAS_P_TOL} on P(A),P(B); " + "; ".join(parts))


def criterion_6c() -> Result:
    cr = 0.3
    C = default_case_fractions(cr)[BiasCase.CASE2]
    converged = bias_safa_recurrence(BiasParams(C, cr, cr, cr, BIAS_ROUNDS)).bias[-1]
    flat = bias_fedavg(cr, cr)
    return Result("6(c) Case2 bias <= FedAvg", converged <= flat,
                  f"Case2 converged bias {converged:.4f} vs FedAvg {flat:.4f} "
                  "(unattainable: the recurrence limit is (2-cr)/(1+cr-cr^2); see decisions ledger)")


def criterion_7() -> Result:
    """Identical weight trajectories at cr=0, tau=1, C=1."""
    parts, ok = [], True
    for task, extra in (("regression", {}), ("synthetic-classify", {"federation.m": 20})):
        traj = {}
        for proto in ("safa", "fedavg", "fedcs"):
            cfg = RunConfig.for_task(task, **{"run.protocol": proto, "federation.C": 1.0,
                                              "federation.crash_prob": 0.0, "federation.lag_tolerance": 1,
                                              "run.master_seed": 7, **extra})
            sim = build_simulation(cfg, _dataset(task))
            traj[proto] = []
            for _ in range(EQUIV_ROUNDS):
                sim.step()
                traj[proto].append(sim.global_model.weights.copy())
        same = all(np.array_equal(a, b) and np.array_equal(a, c)
                   for a, b, c in zip(traj["safa"], traj["fedavg"], traj["fedcs"]))
        ok &= same
        parts.append(f"{task}: {'bitwise equal' if same else 'DIFFER'}")
    return Result("7 protocol equivalence", ok, f"{EQUIV_ROUNDS} rounds; " + "; ".join(parts))


def criterion_8() -> Result:
    best = {}
    for proto in ("safa", "fedavg"):
        best[proto] = [run_summary("regression", **{"run.protocol": proto, "federation.m": 5, "federation.C": 0.1,
                                                    "federation.crash_prob": 0.7, "run.rounds": 100,
                                                    "run.master_seed": s}).summary().best_accuracy
                       for s in ACCURACY_SEEDS]
    med = {k: statistics.median(v) for k, v in best.items()}
    return Result("8 SAFA beats FedAvg (regression, cr=0.7)", med["safa"] > med["fedavg"],
                  f"median best accuracy over {len(ACCURACY_SEEDS)} seeds: SAFA {med['safa']:.4f} "
                  f"vs FedAvg {med['fedavg']:.4f}")


INVARIANT_SUITES = {
    "gradient vs finite differences": ("test_learners", "test_gradient_matches_finite_differences"),
    "cache conservation": ("test_protocol", "test_safa_round_invariants"),
    "selection partition/quota/compensation": ("test_protocol", "test_cfcfm_partition_quota_compensation"),
    "round-length monotonicity": ("test_env", "test_round_length_monotone"),
    "determinism golden files": ("test_golden", "test_matches_golden"),
}


def criterion_9() -> Result:
    import importlib
    sys.path.insert(0, str(Path(__file__).parent))
    missing = [name for name, (mod, fn) in INVARIANT_SUITES.items()
               if not hasattr(importlib.import_module(mod), fn)]
    return Result("9 invariant suites", not missing,
                  f"{len(INVARIANT_SUITES) - len(missing)}/{len(INVARIANT_SUITES)} suites present "
                  f"({', '.join(f'{m}::{f}' for m, f in INVARIANT_SUITES.values())}); "
                  "their pass/fail status is reported by the same pytest run")


# -- pytest wrappers ------------------------------------------------------------

@pytest.fixture
def emit(capsys):
    def _emit(result: Result):
        with capsys.disabled():
            print("\n" + result.line())
        return result
    return _emit


def test_criterion_1_eur(emit):
    assert emit(criterion_1()).ok


def test_criterion_2_sync_ratio(emit):
    assert emit(criterion_2()).ok


def test_criterion_3_fedavg_stall(emit):
    assert emit(criterion_3()).ok


def test_criterion_4_tdist(emit):
    assert emit(criterion_4()).ok


def test_criterion_5_futility(emit):
    assert emit(criterion_5()).ok


def test_criterion_6a_case1_exact(emit):
    assert emit(criterion_6a()).ok


def test_criterion_6b_monte_carlo(emit, tmp_path):
    assert emit(criterion_6b(tmp_path / "bias_discrepancy.csv")).ok


@pytest.mark.xfail(strict=True, reason="unattainable under the specified selection model; see decisions ledger")
def test_criterion_6c_case2_below_fedavg(emit):
    assert emit(criterion_6c()).ok


def test_criterion_7_equivalence(emit):
    assert emit(criterion_7()).ok


def test_criterion_8_accuracy_ordering(emit):
    assert emit(criterion_8()).ok


def test_criterion_9_invariant_suites(emit):
    assert emit(criterion_9()).ok


if __name__ == "__main__":
    results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6a(),
               criterion_6b(), criterion_6c(), criterion_7(), criterion_8(), criterion_9()]
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.ok for r in results if not r.criterion.startswith("6(c)")) else 1)
