import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retcast.breaks import (BreakError, KernelCost, detect_breaks, exhaustive_segmentation, median_heuristic,
                            pelt_rbf, pettitt, segment_cost, segmentation_cost)


@given(st.integers(0, 10_000), st.integers(2, 30))
def test_prefix_cost_matches_direct(seed, n):
    y = np.random.default_rng(seed).normal(size=n)
    C = KernelCost(y, 0.7)
    for a in range(0, n, 3):
        for b in range(a + 1, n + 1, 4):
            assert np.isclose(C(a, b), segment_cost(y[a:b], 0.7), atol=1e-9)


def test_pelt_equals_exhaustive_small():
    rng = np.random.default_rng(0)
    for k in range(60):
        n = rng.integers(2, 10)
        y = rng.normal(size=n) + np.where(np.arange(n) > n // 2, 2.0, 0.0)
        g = median_heuristic(y)
        beta = rng.uniform(0.05, 2.0)
        bps = pelt_rbf(y, g, beta)
        ref, cost = exhaustive_segmentation(y, g, beta)
        assert np.isclose(segmentation_cost(y, bps, g, beta), cost, atol=1e-9)


def test_obvious_break_found():
    y = np.concatenate([np.zeros(30), np.full(30, 5.0)]) + 0.01 * np.random.default_rng(1).normal(size=60)
    assert pelt_rbf(y) == [30]
    rep = detect_breaks(y, "s")
    assert rep.pettitt.index == 29 and rep.pettitt.p < 1e-6


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=40))
def test_breakpoints_interior_and_increasing(values):
    bps = pelt_rbf(values, min_seg=2)
    assert all(0 < b < len(values) for b in bps)
    assert bps == sorted(set(bps))
    edges = [0] + bps + [len(values)]
    assert all(b - a >= 2 for a, b in zip(edges[:-1], edges[1:]))


def test_pettitt_closed_form():
    rng = np.random.default_rng(2)
    y = rng.normal(size=25)
    T = len(y)
    U = [sum(np.sign(y[i] - y[j]) for i in range(k + 1) for j in range(k + 1, T)) for k in range(T - 1)]
    K = max(abs(u) for u in U)
    res = pettitt(y)
    assert res.K == K
    assert res.p == min(1.0, 2 * math.exp(-6 * K ** 2 / (T ** 3 + T ** 2)))


def test_pettitt_errors_and_constant():
    with pytest.raises(BreakError):
        pettitt([1, 2, 3])
    res = pettitt(np.ones(10))
    assert res.K == 0 and res.p == 1.0


def test_bad_penalty():
    with pytest.raises(BreakError):
        pelt_rbf([1.0, 2.0, 3.0], gamma=1.0, beta=-1.0)
