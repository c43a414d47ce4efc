import numpy as np
import pytest
from hypothesis import given, strategies as st

from safasim.metrics import (eur_empirical, eur_theoretical, futility, population_variance, sync_ratio,
                             version_variance)


def test_eur_empirical_examples():
    assert eur_empirical(set(), {1, 2}, 10) == 0.0
    assert eur_empirical(set(range(1, 6)), {4, 5, 9}, 10) == pytest.approx(0.3)
    assert eur_empirical({1, 2, 3}, set(), 10) == pytest.approx(0.3)


@given(m=st.integers(1, 40), data=st.data())
def test_eur_empirical_bounds(m, data):
    P = set(data.draw(st.lists(st.integers(0, m - 1), unique=True)))
    K = set(data.draw(st.lists(st.integers(0, m - 1), unique=True)))
    assert 0.0 <= eur_empirical(P, K, m) <= min(1.0, len(P) / m)


def test_eur_theoretical_examples():
    assert eur_theoretical(0.5, 0.3) == pytest.approx(0.5)
    assert eur_theoretical(0.9, 0.3) == pytest.approx(0.7)
    for C in (0.1, 0.4, 1.0):
        assert eur_theoretical(C, 0.0) == pytest.approx(C)


def test_sync_ratio_examples():
    assert sync_ratio([10] * 7, 10) == 1.0
    assert sync_ratio([5, 3], 10, 2) == pytest.approx(0.4)


def test_version_variance_examples():
    assert version_variance([[3, 3, 3], [4, 4]]) == 0.0
    assert version_variance([[0, 2]]) == pytest.approx(1.0)
    assert population_variance([]) == 0.0


@given(st.lists(st.lists(st.integers(0, 50), min_size=1, max_size=10), min_size=1, max_size=10),
       st.randoms(use_true_random=False))
def test_vv_and_sr_invariant_under_relabeling(rounds, rnd):
    shuffled = []
    for r in rounds:
        r = list(r)
        rnd.shuffle(r)
        shuffled.append(r)
    assert version_variance(rounds) == pytest.approx(version_variance(shuffled))
    counts = [len(r) for r in rounds]
    assert sync_ratio(counts, 50) == sync_ratio(list(reversed(counts)), 50)


def test_futility():
    assert futility([1.5, 0.5], [10, 10]) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        futility([0.0], [0.0])
