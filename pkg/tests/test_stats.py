from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu

from neatbranch.stats import doubled_midranks, mann_whitney_u, u_statistic, vargha_delaney_a12

samples = st.lists(st.integers(0, 6).map(float), min_size=1, max_size=12)


def test_doubled_midranks_with_ties():
    assert doubled_midranks([3.0, 1.0, 3.0, 2.0]) == [7, 2, 7, 4]


def test_exact_small_cases():
    assert mann_whitney_u([1, 2, 3], [4, 5, 6]) == pytest.approx(0.1)
    assert mann_whitney_u([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert mann_whitney_u([5, 5, 5], [5, 5, 5]) == pytest.approx(1.0)
    assert u_statistic([1, 2, 3], [4, 5, 6]) == 0.0


def test_a12_examples():
    assert vargha_delaney_a12([1, 2], [2, 3]) == pytest.approx(0.125)
    assert vargha_delaney_a12([1, 2, 3, 4], [2, 3, 4, 5]) == pytest.approx(0.28125)
    assert vargha_delaney_a12([1, 2, 3], [2, 3, 4]) == pytest.approx(2 / 9)
    assert vargha_delaney_a12([3, 3], [3, 3]) == 0.5


def test_a12_of_point_three_seven_five():
    # 4 of 16 pairs won outright, 4 tied
    xs, ys = [1, 2, 3, 4], [2, 3, 4, 5]
    assert vargha_delaney_a12(xs, ys) + vargha_delaney_a12(ys, xs) == pytest.approx(1.0)
    assert vargha_delaney_a12([0, 1], [1, 1]) == pytest.approx(0.25)
    assert vargha_delaney_a12([0, 2], [1, 1]) == pytest.approx(0.5)
    assert vargha_delaney_a12([0, 1, 2, 3], [1, 2, 2, 3]) == pytest.approx(0.375)


def test_empty_samples_raise():
    for f in (mann_whitney_u, vargha_delaney_a12, u_statistic):
        with pytest.raises(ValueError):
            f([], [1.0])
        with pytest.raises(ValueError):
            f([1.0], [])


def test_a12_complement_many_pairs():
    rng = random.Random(0)
    for _ in range(1000):
        xs = [rng.randint(0, 5) for _ in range(rng.randint(1, 8))]
        ys = [rng.randint(0, 5) for _ in range(rng.randint(1, 8))]
        assert vargha_delaney_a12(xs, ys) + vargha_delaney_a12(ys, xs) == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_symmetry(xs, ys):
    assert mann_whitney_u(xs, ys) == pytest.approx(mann_whitney_u(ys, xs), abs=1e-12)
    assert 0.0 <= mann_whitney_u(xs, ys) <= 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=7), st.lists(st.floats(0, 100), min_size=1, max_size=10))
def test_exact_matches_scipy(xs, ys):
    if len(set(xs + ys)) < len(xs + ys):
        return  # scipy's exact method assumes no ties
    expected = mannwhitneyu(xs, ys, alternative="two-sided", method="exact").pvalue
    assert mann_whitney_u(xs, ys) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10).map(float), min_size=8, max_size=30),
       st.lists(st.integers(0, 10).map(float), min_size=8, max_size=30))
def test_asymptotic_matches_scipy(xs, ys):
    expected = mannwhitneyu(xs, ys, alternative="two-sided", method="asymptotic", use_continuity=True).pvalue
    assert mann_whitney_u(xs, ys) == pytest.approx(expected, abs=1e-9)


def test_thirty_vs_thirty_separated():
    a = [100.0] * 30
    b = [80.0 + i % 5 for i in range(30)]
    assert mann_whitney_u(a, b) < 0.001
    assert vargha_delaney_a12(a, b) == 1.0
