"""Selection bias between the fastest and the slowest client.

Client A always finishes first and client B always finishes last. The bias
in round r is P(A contributes) / P(B contributes), where a client
contributes in round r if it is picked in round r or if its undrafted update
from round r-1 reaches the cache through the bypass. The contribution
probability splits into a direct part P_D and a bypass part P_S.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _random
from ._validation import check_fraction, check_positive


class AnalyticInconsistencyError(ArithmeticError):
    """A probability produced by the analytic model left [0, 1]."""

    def __init__(self, message, round=None, quantity=None):
        super().__init__(message)
        self.round = round
        self.quantity = quantity


class BiasCase(str, enum.Enum):
    CASE1 = "case1"   # quota covers every arrival
    CASE2 = "case2"   # prioritized arrivals alone cannot fill the quota
    CASE3 = "case3"   # prioritized arrivals alone fill the quota


@dataclass(frozen=True)
class BiasParams:
    C: float
    R: float
    cr_A: float
    cr_B: float
    max_round: int = 50

    def __post_init__(self):
        check_fraction(self.C, "C", low_open=True)
        check_fraction(self.R, "R", high_open=True)
        check_fraction(self.cr_A, "cr_A", high_open=True)
        check_fraction(self.cr_B, "cr_B", high_open=True)
        check_positive(self.max_round, "max_round", integer=True)

    @property
    def case(self) -> BiasCase:
        return classify_bias_case(self.C, self.R)


@dataclass
class BiasTrace:
    """Per-round probabilities; index i holds round i + 1."""

    pd_a: np.ndarray
    ps_a: np.ndarray
    pd_b: np.ndarray
    ps_b: np.ndarray
    se_a: np.ndarray | None = field(default=None, repr=False)
    se_b: np.ndarray | None = field(default=None, repr=False)
    se_bias: np.ndarray | None = field(default=None, repr=False)

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, len(self.pd_a) + 1)

    @property
    def p_a(self) -> np.ndarray:
        return self.pd_a + self.ps_a

    @property
    def p_b(self) -> np.ndarray:
        return self.pd_b + self.ps_b

    @property
    def bias(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.divide(self.p_a, self.p_b)


def classify_bias_case(C, R) -> BiasCase:
    check_fraction(C, "C", low_open=True)
    check_fraction(R, "R", high_open=True)
    if C >= 1.0 - R:
        return BiasCase.CASE1
    if C >= (1.0 - C) * (1.0 - R):
        return BiasCase.CASE2
    return BiasCase.CASE3


def bias_fedavg(cr_A, cr_B) -> float:
    """Bias of random pre-training selection; depends on crash rates only."""
    check_fraction(cr_A, "cr_A")
    check_fraction(cr_B, "cr_B")
    if cr_B == 1.0:
        raise ValueError("cr_B = 1 gives client B zero contribution probability")
    return (1.0 - cr_A) / (1.0 - cr_B)


def sigma_recurrence(cr, k, pd_first=None) -> np.ndarray:
    """sigma(1..k) for the alternating recurrence P_D(r) = (1 - cr) * sigma(r - 1).

    ``pd_first`` is P_D(1); it defaults to 1 - cr (a fresh round-1 competitor).
    """
    check_positive(k, "k", integer=True)
    pd = 1.0 - cr if pd_first is None else pd_first
    out = np.empty(k)
    for i in range(k):
        out[i] = 1.0 - pd
        pd = (1.0 - cr) * out[i]
    return out


def bias_sigma_closed_form(cr, k) -> float:
    """sigma(k) from the uncorrected closed form, kept for comparison.

    This disagrees with :func:`sigma_recurrence`; its k -> inf limit is
    (3 - 2cr)/(2 - cr) > 1, i.e. a negative P_D.
    """
    check_positive(k, "k", integer=True)
    return (2 * cr - (cr - 1) ** (k + 1) - 3) / (cr - 2)


def bias_sigma_corrected(cr, k, *, shift=0) -> float:
    """Closed-form solution of :func:`sigma_recurrence`.

    With P_D(1) = 1 - cr, sigma(k) = (1 - (cr - 1)^(k+1)) / (2 - cr).
    ``shift=1`` gives the variant with P_D(1) = 0 (a slowest client that
    cannot be picked in round 1).
    """
    check_positive(k, "k", integer=True)
    return (1 - (cr - 1) ** (k + 1 - shift)) / (2 - cr)


_ROUNDOFF = 1e-12


def _check_prob(value, name, r):
    # round-off of order 1e-18 is tolerated; the value itself is left untouched
    if not (-_ROUNDOFF <= value <= 1.0 + _ROUNDOFF) or math.isnan(value):
        raise AnalyticInconsistencyError(f"{name} = {value!r} outside [0, 1] in round {r}", r, name)
    return value


def bias_safa_recurrence(params: BiasParams) -> BiasTrace:
    """Iterate the case-dependent P_D / P_S recurrences up to ``max_round``.

    Round 1 has no bypass entries, and nobody is prioritized, so selection is
    pure arrival order: A is picked whenever it finishes, while B is picked
    in round 1 only when the quota covers every arrival (case 1).
    """
    case = params.case
    cr_a, cr_b = params.cr_A, params.cr_B
    r_max = params.max_round
    pd_a, ps_a, pd_b, ps_b = (np.zeros(r_max) for _ in range(4))
    pd_a[0] = 1.0 - cr_a
    pd_b[0] = 1.0 - cr_b if case is BiasCase.CASE1 else 0.0
    for i in range(1, r_max):
        r = i + 1
        sig_a = 1.0 - pd_a[i - 1]
        sig_b = 1.0 - pd_b[i - 1]
        if case is BiasCase.CASE3:
            pd_a[i] = (1.0 - cr_a) * sig_a
            ps_a[i] = cr_a * (sig_a - cr_a)
        else:
            pd_a[i] = 1.0 - cr_a
        if case is BiasCase.CASE1:
            pd_b[i] = 1.0 - cr_b
        elif case is BiasCase.CASE2:
            pd_b[i] = (1.0 - cr_b) * sig_b
            ps_b[i] = cr_b * (sig_b - cr_b)
        else:
            ps_b[i] = 1.0 - cr_b
        for name, arr in (("P_D(A)", pd_a), ("P_S(A)", ps_a), ("P_D(B)", pd_b), ("P_S(B)", ps_b)):
            _check_prob(arr[i], name, r)
        _check_prob(pd_a[i] + ps_a[i], "P(A)", r)
        _check_prob(pd_b[i] + ps_b[i], "P(B)", r)
    return BiasTrace(pd_a, ps_a, pd_b, ps_b)


def bias_monte_carlo(params: BiasParams, trials=10_000, seed=0, *, m_background=100) -> BiasTrace:
    """Simulate the two-client selection game under CFCFM.

    The population is A, ``m_background`` clients crashing with probability
    R, and B. Device speeds are fixed for a run, so only their order matters;
    columns are laid out in finishing order (A first, B last) and a trial
    differs from another only through its crash draws. Selection follows
    CFCFM with quota ceil(C * m); the compensation list starts empty.
    """
    check_positive(trials, "trials", integer=True)
    check_positive(m_background, "m_background", integer=True, allow_zero=True)
    rng = _random.stream(seed, _random.BIAS_MC)
    m = m_background + 2
    quota = max(1, math.ceil(round(params.C * m, 9)))
    cr = np.full(m, params.R)
    cr[0], cr[-1] = params.cr_A, params.cr_B

    picked_prev = np.ones((trials, m), dtype=bool)     # nobody is prioritized in round 1
    undrafted_prev = np.zeros((trials, m), dtype=bool)
    r_max = params.max_round
    stats = {k: np.zeros(r_max) for k in ("pd_a", "ps_a", "pd_b", "ps_b", "p_a", "p_b", "p_ab")}
    for i in range(r_max):
        arrived = rng.random((trials, m)) >= cr
        prio = arrived & ~picked_prev
        rest = arrived & picked_prev
        pick_prio = prio & (np.cumsum(prio, axis=1) <= quota)
        room = quota - pick_prio.sum(axis=1, keepdims=True)
        pick_rest = rest & (np.cumsum(rest, axis=1) <= room)
        picked = pick_prio | pick_rest
        via_bypass = undrafted_prev & ~picked
        contrib = picked | undrafted_prev
        a, b = contrib[:, 0], contrib[:, -1]
        stats["pd_a"][i] = picked[:, 0].mean()
        stats["ps_a"][i] = via_bypass[:, 0].mean()
        stats["pd_b"][i] = picked[:, -1].mean()
        stats["ps_b"][i] = via_bypass[:, -1].mean()
        stats["p_a"][i] = a.mean()
        stats["p_b"][i] = b.mean()
        stats["p_ab"][i] = (a & b).mean()
        picked_prev = picked
        undrafted_prev = arrived & ~picked

    pa, pb = stats["p_a"], stats["p_b"]
    var_a = pa * (1 - pa) / trials
    var_b = pb * (1 - pb) / trials
    cov = (stats["p_ab"] - pa * pb) / trials
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = pa / pb
        se_bias = np.abs(ratio) * np.sqrt(var_a / pa**2 + var_b / pb**2 - 2 * cov / (pa * pb))
    return BiasTrace(stats["pd_a"], stats["ps_a"], stats["pd_b"], stats["ps_b"],
                     se_a=np.sqrt(var_a), se_b=np.sqrt(var_b), se_bias=se_bias)


def default_case_fractions(R=0.3):
    """One representative C per case for crash ratio R."""
    fractions = {BiasCase.CASE1: min(1.0, 1.0 - R + 0.2)}
    lo, hi = (1.0 - R) / (2.0 - R), 1.0 - R     # case 2 is lo <= C < hi
    fractions[BiasCase.CASE2] = 0.5 * (lo + hi)
    fractions[BiasCase.CASE3] = 0.5 * lo
    return fractions


def discrepancy_table(analytic: BiasTrace, mc: BiasTrace):
    """Per-round absolute gaps in P(A), P(B) and the bias ratio."""
    with np.errstate(invalid="ignore"):
        return {
            "round": analytic.rounds,
            "dP_A": np.abs(analytic.p_a - mc.p_a),
            "dP_B": np.abs(analytic.p_b - mc.p_b),
            "dbias": np.abs(analytic.bias - mc.bias),
        }
