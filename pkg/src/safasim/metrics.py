"""Holistic efficiency metrics: EUR, SR, VV and futility."""

from __future__ import annotations

import numpy as np

from ._validation import check_fraction, check_positive


def eur_empirical(picked, crashed, m) -> float:
    """Effective update ratio of one round: picked clients that did not crash, over m."""
    check_positive(m, "m", integer=True)
    picked = set(picked)
    return len(picked - (picked & set(crashed))) / m


def eur_theoretical(C, R) -> float:
    """EUR of selection-after-training with quota fraction C and crash ratio R."""
    check_fraction(C, "C", low_open=True)
    check_fraction(R, "R")
    return 1.0 - R if C >= 1.0 - R else float(C)


def sync_ratio(per_round_m_sync, m, r=None) -> float:
    """Mean fraction of clients that receive the global model per round."""
    check_positive(m, "m", integer=True)
    counts = list(per_round_m_sync)
    r = len(counts) if r is None else r
    check_positive(r, "r", integer=True)
    return float(sum(counts)) / (r * m)


def population_variance(values) -> float:
    v = np.asarray(list(values), dtype=float)
    return float(v.var()) if v.size else 0.0


def version_variance(per_round_versions, r=None) -> float:
    """Mean over rounds of the population variance of the versions trained on."""
    rounds = [list(v) for v in per_round_versions]
    r = len(rounds) if r is None else r
    check_positive(r, "r", integer=True)
    return sum(population_variance(v) for v in rounds) / r


def futility(per_client_epochs_wasted, per_client_epochs_attempted) -> float:
    """Fraction of attempted local epochs that were thrown away."""
    wasted = float(np.sum(per_client_epochs_wasted))
    attempted = float(np.sum(per_client_epochs_attempted))
    if attempted <= 0:
        raise ValueError("attempted epochs must be positive")
    return wasted / attempted
