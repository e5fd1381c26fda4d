"""Two-sided Mann-Whitney U test and the Vargha-Delaney A12 effect size."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

EXACT_LIMIT = 7  # exact distribution when min(n, m) <= this


def _check(xs: Sequence[float], ys: Sequence[float]) -> None:
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError("both samples must be non-empty")


def doubled_midranks(values: Sequence[float]) -> list[int]:
    """Midranks times two, so tied groups stay integral."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # positions i..j (0-based) share rank ((i+1)+(j+1))/2
        for k in range(i, j + 1):
            ranks[order[k]] = i + j + 2
        i = j + 1
    return ranks


def u_statistic(xs: Sequence[float], ys: Sequence[float]) -> float:
    """U for ``xs``: pairs with x > y plus half the ties."""
    _check(xs, ys)
    ranks = doubled_midranks(list(xs) + list(ys))
    n = len(xs)
    return sum(ranks[:n]) / 2 - n * (n + 1) / 2


def _exact_p(ranks: list[int], n: int) -> float:
    """P(|W - E W| >= |w - E W|) over all n-subsets of the pooled doubled ranks."""
    total_n = len(ranks)
    observed = sum(ranks[:n])
    center2 = n * (total_n + 1)  # mean of the doubled rank sum
    # counts[k][s]: number of k-subsets with doubled-rank sum s
    counts: list[Counter] = [Counter() for _ in range(n + 1)]
    counts[0][0] = 1
    for r in ranks:
        for k in range(n, 0, -1):
            for s, c in counts[k - 1].items():
                counts[k][s + r] += c
    dist = abs(observed - center2)
    extreme = sum(c for s, c in counts[n].items() if abs(s - center2) >= dist)
    return min(1.0, extreme / math.comb(total_n, n))


def _normal_p(ranks: list[int], n: int, m: int) -> float:
    big_n = n + m
    u = sum(ranks[:n]) / 2 - n * (n + 1) / 2
    mu = n * m / 2
    ties = sum(t ** 3 - t for t in Counter(ranks).values())
    var = n * m / 12 * ((big_n + 1) - ties / (big_n * (big_n - 1)))
    if var <= 0:
        return 1.0
    z = max(0.0, abs(u - mu) - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def mann_whitney_u(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Two-sided p-value; exact (conditional on ties) for small samples."""
    _check(xs, ys)
    if len(xs) > len(ys):  # the test is symmetric; enumerate the smaller side
        xs, ys = ys, xs
    ranks = doubled_midranks(list(xs) + list(ys))
    n, m = len(xs), len(ys)
    if min(n, m) <= EXACT_LIMIT:
        return _exact_p(ranks, n)
    return _normal_p(ranks, n, m)


def vargha_delaney_a12(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Probability that a draw from ``xs`` beats one from ``ys``, ties counting half."""
    _check(xs, ys)
    greater = sum(1 for x in xs for y in ys if x > y)
    equal = sum(1 for x in xs for y in ys if x == y)
    return (greater + 0.5 * equal) / (len(xs) * len(ys))
