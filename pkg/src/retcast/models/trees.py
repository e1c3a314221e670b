"""Exact-greedy regression trees, random forests and gradient boosting (level- and leaf-wise)."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import brentq

from .base import Design, FittedModel, ModelError

N_ESTIMATORS = (100, 200, 300, 400)
DEPTHS = (1, 2, 3, 4, 5, 6)
LEARNING_RATES = (0.001, 0.01, 0.1)
MAX_FEATURES = (5, 10, 20, 30, 50, 70, 100)
HUBER_QUANTILES = (0.8, 0.9, 0.95)


def huber_loss(r, xi):
    a = np.abs(r)
    return np.where(a <= xi, 0.5 * r * r, xi * (a - 0.5 * xi))


def huber_grad(r, xi):
    """Derivative of the Huber loss in the residual."""
    return np.clip(r, -xi, xi)


def huber_location(y, xi):
    """Constant minimizing the summed Huber loss; the boosting start for Huber fits."""
    y = np.asarray(y, dtype=float)
    score = lambda c: float(np.sum(np.clip(y - c, -xi, xi)))
    lo, hi = float(y.min()), float(y.max())
    if hi - lo <= 0:
        return lo
    return float(brentq(score, lo, hi, xtol=1e-14 * max(1.0, abs(hi), abs(lo))))


def huber_xi_grid(y, quantiles=HUBER_QUANTILES):
    res = np.abs(np.asarray(y) - np.mean(y))
    return tuple(max(float(np.quantile(res, q)), 1.0) for q in quantiles)


@numba.njit(cache=True)
def _best_split(X, S, start, end, g, h, feats, min_child, lam, Gs, Hs):
    best_gain = 0.0
    best_f = -1
    best_thr = 0.0
    best_nl = 0
    parent = Gs * Gs / (Hs + lam)
    for f in feats:
        gl = 0.0
        hl = 0.0
        for k in range(start, end - 1):
            i = S[f, k]
            gl += g[i]
            hl += h[i]
            xa = X[i, f]
            xb = X[S[f, k + 1], f]
            if xb <= xa:
                continue
            hr = Hs - hl
            if hl < min_child or hr < min_child:
                continue
            gr = Gs - gl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_thr = 0.5 * (xa + xb)
                best_nl = k + 1 - start
    return best_gain, best_f, best_thr, best_nl


@numba.njit(cache=True)
def _pick_features(p, k, use_subset):
    if not use_subset or k >= p:
        return np.arange(p)
    perm = np.arange(p)
    for i in range(k):
        j = i + np.random.randint(p - i)
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
    return np.sort(perm[:k])


@numba.njit(cache=True)
def _grow(X, order, g, h, active, max_depth, max_leaves, min_child, lam, k_sub, use_subset, seed, tol):
    n, p = X.shape
    if use_subset:
        np.random.seed(seed)
    m = 0
    for i in range(n):
        if active[i]:
            m += 1
    S = np.empty((p, m), dtype=np.int64)
    for f in range(p):
        c = 0
        for k in range(n):
            i = order[f, k]
            if active[i]:
                S[f, c] = i
                c += 1
    cap = 2 * max_leaves + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    gain_arr = np.zeros(cap)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    Gn = np.zeros(cap)
    Hn = np.zeros(cap)
    cg = np.zeros(cap)
    cf = np.full(cap, -1, dtype=np.int64)
    ct = np.zeros(cap)
    cn = np.zeros(cap, dtype=np.int64)
    is_leaf = np.zeros(cap, dtype=np.bool_)
    flag = np.zeros(n, dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)

    G0 = 0.0
    H0 = 0.0
    for k in range(m):
        G0 += g[S[0, k]]
        H0 += h[S[0, k]]
    nn = 1
    start[0] = 0
    end[0] = m
    Gn[0] = G0
    Hn[0] = H0
    is_leaf[0] = True
    if max_depth > 0 and m > 1:
        fs = _pick_features(p, k_sub, use_subset)
        cg[0], cf[0], ct[0], cn[0] = _best_split(X, S, 0, m, g, h, fs, min_child, lam, G0, H0)
    n_leaves = 1
    while n_leaves < max_leaves:
        node = -1
        bg = tol
        for j in range(nn):
            if is_leaf[j] and cf[j] >= 0 and cg[j] > bg:
                bg = cg[j]
                node = j
        if node < 0:
            break
        f = cf[node]
        s0 = start[node]
        e0 = end[node]
        nl = cn[node]
        for k in range(s0, e0):
            flag[S[f, k]] = k < s0 + nl
        for ff in range(p):
            if ff == f:
                continue
            a = s0
            b = 0
            for k in range(s0, e0):
                i = S[ff, k]
                if flag[i]:
                    S[ff, a] = i
                    a += 1
                else:
                    buf[b] = i
                    b += 1
            for k in range(b):
                S[ff, a + k] = buf[k]
        L = nn
        R = nn + 1
        nn += 2
        feat[node] = f
        thr[node] = ct[node]
        left[node] = L
        right[node] = R
        gain_arr[node] = cg[node]
        is_leaf[node] = False
        start[L] = s0
        end[L] = s0 + nl
        start[R] = s0 + nl
        end[R] = e0
        gl = 0.0
        hl = 0.0
        for k in range(s0, s0 + nl):
            gl += g[S[f, k]]
            hl += h[S[f, k]]
        Gn[L] = gl
        Hn[L] = hl
        Gn[R] = Gn[node] - gl
        Hn[R] = Hn[node] - hl
        for c in (L, R):
            depth[c] = depth[node] + 1
            is_leaf[c] = True
            if depth[c] < max_depth and end[c] - start[c] > 1:
                fs = _pick_features(p, k_sub, use_subset)
                cg[c], cf[c], ct[c], cn[c] = _best_split(X, S, start[c], end[c], g, h, fs,
                                                         min_child, lam, Gn[c], Hn[c])
        n_leaves += 1
    for j in range(nn):
        if is_leaf[j]:
            value[j] = -Gn[j] / (Hn[j] + lam) if Hn[j] + lam > 0 else 0.0
    return feat[:nn], thr[:nn], left[:nn], right[:nn], value[:nn], gain_arr[:nn], Hn[:nn]


@numba.njit(cache=True)
def _predict_tree(X, feat, thr, left, right, value, out, scale):
    for i in range(X.shape[0]):
        j = 0
        while feat[j] >= 0:
            if X[i, feat[j]] <= thr[j]:
                j = left[j]
            else:
                j = right[j]
        out[i] += scale * value[j]


@dataclass(frozen=True, eq=False)
class Tree:
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray

    @property
    def n_leaves(self):
        return int(np.sum(self.feat < 0))

    @property
    def depth(self):
        d = np.zeros(len(self.feat), dtype=int)
        for j in range(len(self.feat)):
            if self.feat[j] >= 0:
                d[self.left[j]] = d[self.right[j]] = d[j] + 1
        return int(d.max())

    def predict(self, X):
        out = np.zeros(X.shape[0])
        _predict_tree(X, self.feat, self.thr, self.left, self.right, self.value, out, 1.0)
        return out


def _presort(X):
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def _build(X, order, g, h, active, max_depth, max_leaves, min_child, lam, k_sub=0, seed=0):
    scale = float(np.sum(g * g))
    tol = 1e-13 * scale
    out = _grow(X, order, g, h, active, int(max_depth), int(max_leaves), float(min_child), float(lam),
                int(k_sub), k_sub > 0, int(seed), tol)
    return Tree(*out)


@dataclass(frozen=True, eq=False)
class TreeEnsemble(FittedModel):
    trees: tuple = ()
    base: float = 0.0
    eta: float = 1.0
    mode: str = "boost_level"
    n_features: int = 0

    @property
    def B(self):
        return len(self.trees)

    def predict(self, X, n_trees: int | None = None):
        X = np.ascontiguousarray(self._check_width(X, self.n_features))
        use = self.trees if n_trees is None else self.trees[:n_trees]
        out = np.zeros(X.shape[0])
        if self.mode == "rf":
            for t in use:
                _predict_tree(X, t.feat, t.thr, t.left, t.right, t.value, out, 1.0)
            return out / max(len(use), 1)
        for t in use:
            _predict_tree(X, t.feat, t.thr, t.left, t.right, t.value, out, self.eta)
        return out + self.base

    def staged_predict(self, X, stages):
        """Predictions after each count in ``stages`` (ascending) without refitting."""
        X = np.ascontiguousarray(self._check_width(X, self.n_features))
        out = np.zeros(X.shape[0])
        res = {}
        done = 0
        for s in sorted(stages):
            s = min(s, len(self.trees))
            for t in self.trees[done:s]:
                _predict_tree(X, t.feat, t.thr, t.left, t.right, t.value, out,
                              1.0 if self.mode == "rf" else self.eta)
            done = s
            res[s] = out / max(s, 1) if self.mode == "rf" else out + self.base
        return res

    def truncated(self, n_trees):
        hp = dict(self.hyperparams, B=min(n_trees, len(self.trees)))
        return TreeEnsemble(self.kind, hp, trees=self.trees[:n_trees], base=self.base, eta=self.eta,
                            mode=self.mode, n_features=self.n_features)

    @property
    def distinct_features_used(self):
        used = set()
        for t in self.trees:
            used.update(t.feat[t.feat >= 0].tolist())
        return len(used)

    @property
    def avg_leaf_count(self):
        return float(np.mean([t.n_leaves for t in self.trees])) if self.trees else 0.0

    @property
    def complexity(self):
        if self.mode == "rf":
            return self.avg_leaf_count
        return self.distinct_features_used


def tree_feature_stats(model: TreeEnsemble):
    """Distinct split features and the summed split gains (impurity decrease) per feature."""
    mdg = np.zeros(model.n_features)
    for t in model.trees:
        m = t.feat >= 0
        np.add.at(mdg, t.feat[m], t.gain[m])
    if model.mode == "rf" and model.trees:
        mdg /= len(model.trees)
    return model.distinct_features_used, mdg


def _check(train: Design, min_leaf):
    if train.n < 1:
        raise ModelError("empty design")
    X = np.ascontiguousarray(train.X)
    return X, _presort(X)


def fit_cart(train: Design, max_depth: int, min_leaf: int = 1, max_leaves: int | None = None) -> TreeEnsemble:
    """Greedy SSE-reduction tree; leaves hold member means."""
    X, order = _check(train, min_leaf)
    y = train.y
    base = float(np.mean(y))
    g = base - y
    h = np.ones(train.n)
    leaves = max_leaves or 2 ** max_depth
    if np.max(np.abs(g)) <= 1e-12 * max(1.0, abs(base)):
        g = np.zeros_like(g)
    t = _build(X, order, g, h, np.ones(train.n, bool), max_depth, leaves, min_leaf, 0.0)
    return TreeEnsemble("cart", {"max_depth": max_depth, "min_leaf": min_leaf}, trees=(t,), base=base,
                        eta=1.0, mode="boost_level", n_features=X.shape[1])


def fit_random_forest(train: Design, B: int, max_depth: int, max_features: int, seed: int = 0,
                      min_leaf: int = 5, bootstrap: bool = True) -> TreeEnsemble:
    """Bagged trees with a fresh random feature subset at every node."""
    X, order = _check(train, min_leaf)
    n, p = X.shape
    if B < 1:
        raise ModelError("B must be >= 1")
    K = min(int(max_features), p)
    if K < 1:
        raise ModelError("max_features must be >= 1")
    children = np.random.SeedSequence(seed).spawn(B)
    trees = []
    for ss in children:
        rng = np.random.default_rng(ss)
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float) if bootstrap else np.ones(n)
        tree_seed = int(rng.integers(0, 2 ** 31 - 1))
        active = w > 0
        ybar = np.sum(w * train.y) / np.sum(w)
        g = w * (ybar - train.y)
        t = _build(X, order, g, w.copy(), active, max_depth, 2 ** max_depth, min_leaf, 0.0,
                   k_sub=K if K < p else 0, seed=tree_seed)
        t.value[t.feat < 0] += ybar
        trees.append(t)
    hp = {"B": B, "max_depth": max_depth, "max_features": K, "min_leaf": min_leaf}
    return TreeEnsemble("rf", hp, trees=tuple(trees), mode="rf", n_features=p)


def fit_gbm(train: Design, B: int, eta: float, max_depth: int, loss: str = "mse", xi: float = 1.0,
            growth: str = "level", max_leaves: int | None = None, lam: float = 0.0,
            min_leaf: int = 1, seed: int = 0) -> TreeEnsemble:
    """Second-order gradient boosting from the loss-minimizing constant; Huber uses the clipped residual with unit hessian.

    ``growth="leaf"`` expands the highest-gain leaf first up to ``max_leaves``
    (default ``min(31, 2**max_depth)``); ``"level"`` grows every node to ``max_depth``.
    """
    if not 0 < eta <= 1:
        raise ModelError("eta must lie in (0, 1]")
    if B < 1:
        raise ModelError("B must be >= 1")
    if loss not in ("mse", "huber"):
        raise ModelError(f"unknown loss {loss!r}")
    X, order = _check(train, min_leaf)
    y = train.y
    n = len(y)
    if growth == "leaf":
        leaves = max_leaves or min(31, 2 ** max_depth)
        kind = "lgbm"
    elif growth == "level":
        leaves = 2 ** max_depth
        kind = "xgb"
    else:
        raise ModelError(f"unknown growth {growth!r}")
    base = huber_location(y, xi) if loss == "huber" else float(np.mean(y))
    F = np.full(n, base)
    h = np.ones(n)
    active = np.ones(n, bool)
    trees = []
    for _ in range(B):
        r = y - F
        g = -(huber_grad(r, xi) if loss == "huber" else r)
        if np.max(np.abs(g)) <= 1e-12 * max(1.0, abs(base)):
            break
        t = _build(X, order, g, h, active, max_depth, leaves, min_leaf, lam)
        out = np.zeros(n)
        _predict_tree(X, t.feat, t.thr, t.left, t.right, t.value, out, eta)
        F += out
        trees.append(t)
    hp = {"B": B, "eta": eta, "max_depth": max_depth, "loss": loss, "growth": growth,
          "max_leaves": leaves, "lambda": lam}
    if loss == "huber":
        hp["xi"] = xi
        kind += "_h"
    return TreeEnsemble(kind, hp, trees=tuple(trees), base=base, eta=eta,
                        mode="boost_leaf" if growth == "leaf" else "boost_level", n_features=X.shape[1])


def sse_reduction_oracle(x, y, thr):
    """SSE drop from splitting ``y`` at ``x <= thr``; used to check recorded gains."""
    m = x <= thr
    sse = lambda v: float(np.sum((v - v.mean()) ** 2)) if len(v) else 0.0
    return sse(y) - sse(y[m]) - sse(y[~m])
