"""Changepoints: PELT with a Gaussian-kernel segment cost, and the Pettitt rank test."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


class BreakError(ValueError):
    pass


def median_heuristic(y) -> float:
    """gamma = 1 / median of pairwise squared differences (1.0 if that median is zero)."""
    y = np.asarray(y, dtype=float)
    d = (y[:, None] - y[None, :]) ** 2
    med = float(np.median(d[np.triu_indices(len(y), 1)])) if len(y) > 1 else 0.0
    return 1.0 / med if med > 0 else 1.0


class KernelCost:
    """C(a, b) = n - (1/n) sum_{j,k in [a,b)} exp(-gamma (y_j - y_k)^2), via 2-D prefix sums."""

    def __init__(self, y, gamma):
        y = np.asarray(y, dtype=float)
        K = np.exp(-gamma * (y[:, None] - y[None, :]) ** 2)
        S = np.zeros((len(y) + 1, len(y) + 1))
        S[1:, 1:] = K.cumsum(0).cumsum(1)
        self.S = S

    def __call__(self, a, b):
        n = b - a
        if n <= 0:
            return 0.0
        S = self.S
        tot = S[b, b] - S[a, b] - S[b, a] + S[a, a]
        return max(n - tot / n, 0.0)


def segment_cost(y, gamma):
    y = np.asarray(y, dtype=float)
    n = len(y)
    return n - float(np.exp(-gamma * (y[:, None] - y[None, :]) ** 2).sum()) / n


def pelt_rbf(series, gamma: float | None = None, beta: float | None = None, min_seg: int = 1):
    """Penalized optimal segmentation; returns interior breakpoints (segment start indices)."""
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < 2 * min_seg:
        return []
    gamma = median_heuristic(y) if gamma is None else gamma
    beta = 3 * math.log(n) if beta is None else beta
    if gamma <= 0 or beta <= 0:
        raise BreakError("gamma and beta must be positive")
    C = KernelCost(y, gamma)
    F = np.full(n + 1, np.inf)
    F[0] = -beta
    prev = np.zeros(n + 1, dtype=int)
    R = [0]
    for t in range(min_seg, n + 1):
        cand = [s for s in R if t - s >= min_seg]
        if cand:
            costs = [F[s] + C(s, t) + beta for s in cand]
            k = int(np.argmin(costs))
            F[t] = costs[k]
            prev[t] = cand[k]
            # prune starts that can never be optimal again (cost is additive-subadditive here)
            R = [s for s, c in zip(cand, costs) if c - beta <= F[t]] + [s for s in R if t - s < min_seg]
        R.append(t)
    if not np.isfinite(F[n]):
        return []
    bps = []
    t = n
    while t > 0:
        t = prev[t]
        if t > 0:
            bps.append(int(t))
    return sorted(bps)


def exhaustive_segmentation(series, gamma, beta, min_seg: int = 1):
    """Brute-force minimum over every breakpoint set; for small n oracles."""
    y = np.asarray(series, dtype=float)
    n = len(y)
    C = KernelCost(y, gamma)
    best, best_set = math.inf, []
    for m in range(n):
        for bps in itertools.combinations(range(1, n), m):
            edges = (0,) + bps + (n,)
            if any(b - a < min_seg for a, b in zip(edges[:-1], edges[1:])):
                continue
            tot = sum(C(a, b) for a, b in zip(edges[:-1], edges[1:])) + beta * m
            if tot < best - 1e-12:
                best, best_set = tot, list(bps)
    return best_set, best


def segmentation_cost(series, bps, gamma, beta):
    y = np.asarray(series, dtype=float)
    C = KernelCost(y, gamma)
    edges = [0] + list(bps) + [len(y)]
    return sum(C(a, b) for a, b in zip(edges[:-1], edges[1:])) + beta * len(bps)


@dataclass(frozen=True)
class PettittResult:
    K: float
    index: int
    p: float


def pettitt(series) -> PettittResult:
    """Pettitt statistic; ``index`` is the last position of the first segment (0-based)."""
    y = np.asarray(series, dtype=float)
    T = len(y)
    if T < 4:
        raise BreakError("Pettitt test needs at least 4 observations")
    sgn = np.sign(y[:, None] - y[None, :])
    # U_k = sum_{i<=k} sum_{j>k} sgn(y_i - y_j)
    U = np.array([sgn[: k + 1, k + 1:].sum() for k in range(T - 1)], dtype=float)
    absU = np.abs(U)
    K = float(absU.max())
    idx = int(np.argmax(absU))
    p = min(1.0, 2.0 * math.exp(-6.0 * K * K / (T ** 3 + T ** 2)))
    return PettittResult(K, idx, p)


@dataclass(frozen=True)
class BreakReport:
    series_id: str
    pelt_breakpoints: tuple
    beta: float
    gamma: float
    pettitt: PettittResult


def detect_breaks(series, series_id: str = "series", gamma=None, beta=None, min_seg: int = 1):
    y = np.asarray(series, dtype=float)
    g = median_heuristic(y) if gamma is None else gamma
    b = 3 * math.log(len(y)) if beta is None else beta
    return BreakReport(series_id, tuple(pelt_rbf(y, g, b, min_seg)), b, g, pettitt(y))
