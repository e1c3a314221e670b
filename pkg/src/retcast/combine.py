"""Forecast combination: equal, discounted-MSPE, optimized and correlation-penalized weights."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


class CombineError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnsembleWeights:
    weights: np.ndarray
    method: str
    lam: float | None = None
    window_id: int | None = None
    cv_mse: dict | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)):
            raise CombineError("non-finite weights")
        if abs(w.sum() - 1) > 1e-9:
            raise CombineError(f"weights sum to {w.sum()}, not 1")
        object.__setattr__(self, "weights", w)


def equal_weights(n_models: int) -> EnsembleWeights:
    if n_models < 1:
        raise CombineError("need at least one model")
    return EnsembleWeights(np.full(n_models, 1.0 / n_models), "avg")


def dmspe_weights(sq_errors, theta: float = 1.0) -> EnsembleWeights:
    """Inverse discounted squared-error weights.

    ``sq_errors`` is models x validation days; the last day gets discount ``theta**0``.
    """
    e = np.atleast_2d(np.asarray(sq_errors, dtype=float))
    if e.shape[1] < 1:
        raise CombineError("need at least one validation day")
    if not 0 < theta <= 1:
        raise CombineError("theta must lie in (0, 1]")
    n = e.shape[1]
    disc = theta ** (n - np.arange(1, n + 1))
    phi = e @ disc
    zero = phi <= 0
    if zero.any():
        w = zero / zero.sum()
    else:
        inv = 1.0 / phi
        w = inv / inv.sum()
    return EnsembleWeights(w, f"dmspe({theta:g})")


def project_simplex(v):
    """Euclidean projection onto {w >= 0, sum w = 1}."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    cond = u - css / k > 0
    r = k[cond][-1]
    tau = css[r - 1] / r
    return np.maximum(v - tau, 0.0)


def project_affine(v):
    v = np.asarray(v, dtype=float)
    return v - (v.sum() - 1.0) / len(v)


def prediction_correlation(preds):
    """Pearson correlation across model prediction series; constant series get zero entries."""
    P = np.atleast_2d(np.asarray(preds, dtype=float))
    sd = P.std(1)
    const = sd <= 1e-14 * np.maximum(1.0, np.abs(P.mean(1)))
    if const.any():
        warnings.warn(f"constant prediction series for models {np.flatnonzero(const).tolist()}; "
                      "their correlations set to 0")
    Z = np.zeros_like(P)
    ok = ~const
    Z[ok] = (P[ok] - P[ok].mean(1, keepdims=True)) / sd[ok, None]
    rho = Z @ Z.T / P.shape[1]
    np.fill_diagonal(rho, np.where(ok, 1.0, 0.0))
    return np.clip(rho, -1.0, 1.0)


def eq17_objective(w, preds, truth, lam, rho):
    e = truth - w @ preds
    return float(e @ e + lam * w @ rho @ w)


def _kkt_weights(A, b, support):
    """Stationary point of w'Aw - 2b'w on {sum w = 1, w_j = 0 off ``support``}."""
    S = np.asarray(support)
    k = len(S)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2 * A[np.ix_(S, S)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.concatenate([2 * b[S], [1.0]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    w = np.zeros(len(b))
    w[S] = sol[:k]
    return w


def _is_optimal(A, b, w, nonneg, tol=1e-10):
    g = 2 * (A @ w - b)
    scale = 1.0 + np.abs(g).max()
    if abs(w.sum() - 1) > 1e-12:
        return False
    if not nonneg:
        return np.ptp(g) <= tol * scale
    if w.min() < 0:
        return False
    on = w > 0
    nu = g[on].mean()
    return np.ptp(g[on]) <= tol * scale and np.all(g[~on] >= nu - tol * scale)


def solve_weights(preds, truth, lam: float = 0.0, rho=None, nonneg: bool = True, tol: float = 1e-13,
                  max_steps: int = 50_000):
    """Projected gradient with backtracking for the penalized combination objective.

    Every few steps the support of the iterate is tried as the active set; the
    equality-constrained solution there is accepted once it satisfies the
    optimality conditions, which makes the result exact rather than approximate.
    """
    P = np.atleast_2d(np.asarray(preds, dtype=float))
    r = np.asarray(truth, dtype=float)
    M = P.shape[0]
    if rho is None:
        rho = prediction_correlation(P) if lam > 0 else np.zeros((M, M))
    proj = project_simplex if nonneg else project_affine
    A = P @ P.T
    A = A + lam * rho
    b = P @ r
    rr = r @ r
    f = lambda w: float(w @ A @ w - 2 * b @ w + rr)
    if not nonneg:
        w = _kkt_weights(A, b, np.arange(M))
        if _is_optimal(A, b, w, False, 1e-8):
            return w
    w = np.full(M, 1.0 / M)
    fw = f(w)
    step = 1.0 / max(2 * np.linalg.norm(A, 2), 1e-300)
    ok = False
    tried = set()

    def polish(w):
        S = tuple(np.flatnonzero(w > 0))
        if S in tried:
            return None
        tried.add(S)
        wk = _kkt_weights(A, b, S)
        return wk if wk.min() >= 0 and _is_optimal(A, b, wk, True) else None

    for it in range(max_steps):
        g = 2 * (A @ w - b)
        t = step * 4
        while True:
            cand = proj(w - t * g)
            fc = f(cand)
            d = cand - w
            if fc <= fw + g @ d + (d @ d) / (2 * t) or t < 1e-300:
                break
            t *= 0.5
        step = t
        moved = np.max(np.abs(d))
        w, fw = cand, fc
        if nonneg:
            wk = polish(w)
            if wk is not None:
                return wk
        if moved < tol:
            ok = True
            break
    if not ok:
        warnings.warn("weight optimizer hit the step limit; returning last iterate")
    w = proj(w)
    return w


def _folds(n, k):
    edges = np.linspace(0, n, k + 1).round().astype(int)
    return [np.arange(edges[i], edges[i + 1]) for i in range(k)]


def optimize_weights(val_preds, val_truth, lam=None, folds: int = 10, nonneg: bool = True,
                     grid=LAMBDA_GRID) -> EnsembleWeights:
    """Weights minimizing validation SSE plus ``lam * w' rho w`` on the (nonnegative) simplex.

    With ``lam=None`` the penalty is chosen over ``grid`` by contiguous-block
    cross-validation inside the validation window; ``lam=0`` is the plain
    optimized combination.
    """
    P = np.atleast_2d(np.asarray(val_preds, dtype=float))
    r = np.asarray(val_truth, dtype=float)
    if P.shape[1] != len(r):
        raise CombineError("prediction and truth lengths differ")
    cv = None
    if lam is None:
        if len(r) < 2 * folds:
            raise CombineError(f"need at least {2 * folds} validation days for {folds}-fold CV")
        cv = {}
        parts = _folds(len(r), folds)
        for lm in grid:
            err = 0.0
            for hold in parts:
                fit = np.setdiff1d(np.arange(len(r)), hold)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    w = solve_weights(P[:, fit], r[fit], lm, nonneg=nonneg)
                e = r[hold] - w @ P[:, hold]
                err += float(e @ e)
            cv[float(lm)] = err / len(r)
        lam = min(cv, key=lambda k: (cv[k], k))
    w = solve_weights(P, r, float(lam), nonneg=nonneg)
    return EnsembleWeights(w / w.sum(), "op" if lam == 0 and cv is None else "wp", float(lam), cv_mse=cv)


def ensemble_predict(weights: EnsembleWeights | np.ndarray, preds) -> np.ndarray:
    w = weights.weights if isinstance(weights, EnsembleWeights) else np.asarray(weights, dtype=float)
    P = np.atleast_2d(np.asarray(preds, dtype=float))
    if P.shape[0] != len(w):
        raise CombineError(f"{len(w)} weights for {P.shape[0]} models")
    return w @ P
