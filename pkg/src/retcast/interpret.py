"""Feature attribution: R^2 reduction, exact group Shapley, sampled feature Shapley, marginal sweeps."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class InterpretError(ValueError):
    pass


def _r2(y, yhat):
    sst = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum((y - yhat) ** 2)) / sst


def r2_reduction(model, X, y, features=None, feature_names=None) -> np.ndarray:
    """In-sample R^2 lost when each feature column is set to zero (no refit)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if features is None:
        idx = list(range(X.shape[1]))
    else:
        idx = []
        for f in features:
            if isinstance(f, str):
                if feature_names is None or f not in feature_names:
                    raise InterpretError(f"feature {f!r} not in design")
                idx.append(list(feature_names).index(f))
            else:
                if not 0 <= f < X.shape[1]:
                    raise InterpretError(f"feature index {f} out of range")
                idx.append(int(f))
    full = _r2(y, model.predict(X))
    out = np.empty(len(idx))
    for k, j in enumerate(idx):
        if not np.any(X[:, j]):
            out[k] = 0.0
            continue
        Xz = X.copy()
        Xz[:, j] = 0.0
        out[k] = full - _r2(y, model.predict(Xz))
    return out


def normalize_importance(raw) -> np.ndarray:
    """Clip negative reductions at zero and scale to sum one (all-zero stays zero)."""
    v = np.clip(np.asarray(raw, dtype=float), 0.0, None)
    s = v.sum()
    return v / s if s > 0 else v


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    features: tuple
    per_window: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray


def aggregate_importance(per_window, features) -> ImportanceReport:
    """Average window-level reductions, then normalize within the model."""
    pw = np.atleast_2d(np.asarray(per_window, dtype=float))
    raw = pw.mean(0)
    return ImportanceReport(tuple(features), pw, raw, normalize_importance(raw))


@dataclass(frozen=True)
class GroupShapley:
    phi: float
    self_effect: float
    interaction: float


def shapley_group(values: dict, groups) -> dict:
    """Exact Shapley values of a coalition game.

    ``values`` maps frozensets of group names (including the empty set) to the
    coalition value.  The self effect is the marginal term against the empty
    coalition; the interaction is the remainder.
    """
    groups = list(groups)
    n = len(groups)
    if n > 12:
        raise InterpretError("exact mode supports at most 12 players")
    v = {}
    for r in range(n + 1):
        for S in itertools.combinations(groups, r):
            key = frozenset(S)
            if key not in values:
                raise InterpretError(f"missing coalition value for {sorted(key)}")
            v[key] = float(values[key])
    fact = [math.factorial(k) for k in range(n + 1)]
    out = {}
    empty = frozenset()
    for g in groups:
        others = [h for h in groups if h != g]
        phi = 0.0
        for r in range(n):
            w = fact[r] * fact[n - r - 1] / fact[n]
            for S in itertools.combinations(others, r):
                S = frozenset(S)
                phi += w * (v[S | {g}] - v[S])
        self_eff = (v[frozenset({g})] - v[empty]) / n
        out[g] = GroupShapley(phi, self_eff, phi - self_eff)
    return out


def all_coalition_values(players, value_fn) -> dict:
    """Evaluate ``value_fn`` once per coalition, smallest coalitions first."""
    players = list(players)
    out = {}
    for r in range(len(players) + 1):
        for S in itertools.combinations(players, r):
            out[frozenset(S)] = float(value_fn(frozenset(S)))
    return out


@dataclass(frozen=True, eq=False)
class ShapleyEstimate:
    values: np.ndarray
    se: np.ndarray
    n_samples: int
    exact: bool


def shapley_feature(value_fn, n_features: int, n_samples: int = 200, seed: int = 0,
                    exact_max: int = 12, force_sampling: bool = False) -> ShapleyEstimate:
    """Shapley values of ``value_fn`` over feature index sets.

    Exact enumeration when ``n_features <= exact_max``; otherwise random
    permutations with Monte Carlo standard errors.
    """
    cache = {}

    def v(S):
        if S not in cache:
            cache[S] = float(value_fn(S))
        return cache[S]

    P = n_features
    if P <= exact_max and not force_sampling:
        vals = shapley_group({S: v(S) for S in _subsets(range(P))}, range(P))
        return ShapleyEstimate(np.array([vals[j].phi for j in range(P)]), np.zeros(P), 0, True)
    if n_samples < 2:
        raise InterpretError("need at least 2 permutation samples")
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_samples):
        perm = rng.permutation(P)
        contrib = np.empty(P)
        S = frozenset()
        try:
            prev = v(S)
            for j in perm:
                T = S | {int(j)}
                cur = v(T)
                contrib[j] = cur - prev
                S, prev = T, cur
        except Exception as exc:
            log.warning("value function failed on a coalition; draw skipped (%s)", exc)
            continue
        draws.append(contrib)
    if len(draws) < 2:
        raise InterpretError("too few successful permutation draws")
    D = np.array(draws)
    return ShapleyEstimate(D.mean(0), D.std(0, ddof=1) / math.sqrt(len(D)), len(D), False)


def _subsets(items):
    items = list(items)
    for r in range(len(items) + 1):
        for S in itertools.combinations(items, r):
            yield frozenset(int(i) for i in S)


def masked_value(model, X, y, benchmark: float | None = None):
    """Coalition value = OOS-style R^2 of ``model`` with features outside the coalition zeroed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    b = float(np.mean(y)) if benchmark is None else float(benchmark)
    den = float(np.sum((y - b) ** 2))

    def value(S):
        Xm = np.zeros_like(X)
        idx = sorted(S)
        if idx:
            Xm[:, idx] = X[:, idx]
        return 1.0 - float(np.sum((y - model.predict(Xm)) ** 2)) / den

    return value


def marginal_association(model, feature: int, n_features: int, grid_n: int = 50):
    """Prediction as one feature sweeps the open interval (-1, 1), others held at zero."""
    grid = np.linspace(-1.0, 1.0, grid_n + 2)[1:-1]
    X = np.zeros((grid_n, n_features))
    X[:, feature] = grid
    return grid, np.asarray(model.predict(X), dtype=float)
