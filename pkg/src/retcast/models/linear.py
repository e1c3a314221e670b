"""OLS, elastic-net family, PCR/PLS and the group-lasso quadratic-spline GLM."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .base import Design, FittedModel, ModelError, Scaler

log = logging.getLogger(__name__)

PENALTY_GRID = tuple(np.linspace(1e-4, 1e-1, 50))
L1_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)
GLM_L1_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True, eq=False)
class LinearFit(FittedModel):
    coef: np.ndarray = None
    intercept: float = 0.0
    scaler: Scaler = None
    basis: str = "identity"
    n_components: int | None = None
    expand: object = None
    converged: bool = True
    n_iter: int = 0

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.expand is not None:
            X = self.expand.transform(X)
        X = self._check_width(X, len(self.coef))
        Z = self.scaler.transform(X) if self.scaler is not None else X
        return Z @ self.coef + self.intercept

    @property
    def complexity(self):
        if self.n_components is not None:
            return self.n_components
        if self.expand is not None:
            return self.expand.active_features(self.coef)
        return int(np.sum(np.abs(self.coef) > 1e-12))

    @property
    def raw_coef(self):
        """Coefficients on the unscaled (possibly expanded) features."""
        sc = self.scaler.scale if self.scaler is not None else 1.0
        return self.coef / sc


def _center(d: Design, scaler: Scaler):
    Z = scaler.transform(d.X)
    ym = d.y.mean()
    return Z, d.y - ym, ym


def fit_ols(train: Design, standardize: bool = False) -> LinearFit:
    """Least squares with an unpenalized intercept; rank deficiency gives the minimum-norm solution."""
    if train.n < 2:
        raise ModelError("OLS needs at least 2 rows")
    scaler = Scaler.fit(train.X) if standardize else Scaler(train.X.mean(0), np.ones(train.X.shape[1]))
    Z, yc, ym = _center(train, scaler)
    coef, *_ = np.linalg.lstsq(Z, yc, rcond=None)
    return LinearFit("ols", {}, coef=coef, intercept=ym, scaler=scaler)


@numba.njit(cache=True)
def _cd_sweeps(G, c, lam, rho, b, tol, max_sweeps):
    p = len(c)
    q = G @ b
    l1 = lam * rho
    l2 = lam * (1.0 - rho)
    for it in range(max_sweeps):
        dmax = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = b[j]
            z = c[j] - q[j] + gjj * old
            if z > l1:
                new = (z - l1) / (gjj + l2)
            elif z < -l1:
                new = (z + l1) / (gjj + l2)
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for k in range(p):
                    q[k] += G[k, j] * delta
                b[j] = new
                if abs(delta) > dmax:
                    dmax = abs(delta)
        if dmax < tol:
            return b, it + 1, True
    return b, max_sweeps, False


def penalized_objective(G, c, yy, b, lam, rho):
    """(1/2T)||y - Xb||^2 + lam*(rho*|b|_1 + (1-rho)/2*|b|^2) from Gram quantities."""
    return 0.5 * (yy - 2 * c @ b + b @ G @ b) + lam * (rho * np.abs(b).sum() + 0.5 * (1 - rho) * b @ b)


def coordinate_descent(G, c, lam, rho, b0=None, tol=1e-7, max_sweeps=10_000):
    """Cyclic coordinate descent on the Gram form ``G = X'X/T``, ``c = X'y/T``."""
    b = np.zeros(len(c)) if b0 is None else np.array(b0, dtype=float)
    return _cd_sweeps(np.ascontiguousarray(G), np.ascontiguousarray(c), float(lam), float(rho),
                      b, float(tol), int(max_sweeps))


def _gram(train: Design, scaler: Scaler):
    Z, yc, ym = _center(train, scaler)
    n = train.n
    return Z.T @ Z / n, Z.T @ yc / n, ym


def fit_penalized(train: Design, lam: float, rho: float, standardize: bool = True,
                  tol: float = 1e-7, max_sweeps: int = 10_000, warm=None, _gram_cache=None) -> LinearFit:
    """Elastic net: ``rho=1`` LASSO, ``rho=0`` ridge (solved in closed form)."""
    if lam < 0 or not 0 <= rho <= 1:
        raise ModelError("need lam >= 0 and rho in [0, 1]")
    scaler = Scaler.fit(train.X) if standardize else Scaler(train.X.mean(0), np.ones(train.X.shape[1]))
    G, c, ym = _gram_cache if _gram_cache is not None else _gram(train, scaler)
    kind = {1.0: "lasso", 0.0: "ridge"}.get(float(rho), "enet")
    if lam == 0:
        fit = fit_ols(train, standardize)
        return LinearFit(kind, {"lambda": lam, "rho": rho}, coef=fit.coef, intercept=fit.intercept,
                         scaler=fit.scaler)
    if rho == 0:
        b = np.linalg.solve(G + lam * np.eye(len(c)), c)
        return LinearFit(kind, {"lambda": lam, "rho": rho}, coef=b, intercept=ym, scaler=scaler)
    b, it, ok = coordinate_descent(G, c, lam, rho, warm, tol, max_sweeps)
    if not ok:
        warnings.warn(f"coordinate descent hit {max_sweeps} sweeps (lambda={lam}, rho={rho})")
    return LinearFit(kind, {"lambda": lam, "rho": rho}, coef=b, intercept=ym, scaler=scaler,
                     converged=bool(ok), n_iter=int(it))


def penalized_path(train: Design, lams, rho: float, standardize: bool = True) -> list[LinearFit]:
    """Fits along a lambda grid, warm-started from the largest lambda down."""
    scaler = Scaler.fit(train.X) if standardize else Scaler(train.X.mean(0), np.ones(train.X.shape[1]))
    cache = _gram(train, scaler)
    order = np.argsort(lams)[::-1]
    fits = [None] * len(lams)
    warm = None
    for i in order:
        f = fit_penalized(train, float(lams[i]), rho, standardize, warm=warm, _gram_cache=cache)
        warm = f.coef
        fits[i] = f
    return fits


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _rank(s, shape):
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps)) if len(s) else 0


def _dimred_components(train: Design, mode: str, kmax: int, standardize: bool):
    """Coefficient vectors for K = 1..kmax (rank-truncated)."""
    scaler = Scaler.fit(train.X) if standardize else Scaler(train.X.mean(0), np.ones(train.X.shape[1]))
    Z, yc, ym = _center(train, scaler)
    if mode == "pcr":
        U, s, Vt = np.linalg.svd(Z, full_matrices=False)
        r = _rank(s, Z.shape)
        k = min(kmax, r)
        steps = Vt[:k].T * ((U[:, :k].T @ yc) / s[:k])
        coefs = np.cumsum(steps, axis=1).T
    elif mode == "pls":
        s = np.linalg.svd(Z, compute_uv=False)
        r = _rank(s, Z.shape)
        k = min(kmax, r)
        W, P, q = _nipals(Z, yc, k)
        k = W.shape[1]
        coefs = np.empty((k, Z.shape[1]))
        for K in range(1, k + 1):
            coefs[K - 1] = W[:, :K] @ np.linalg.solve(P[:, :K].T @ W[:, :K], q[:K])
    else:
        raise ModelError(f"unknown mode {mode!r}")
    if kmax > r:
        warnings.warn(f"K={kmax} exceeds design rank {r}; truncated")
    return coefs, ym, scaler


def _nipals(Z, y, k):
    X = Z.copy()
    yr = y.copy()
    W, P, q = [], [], []
    for _ in range(k):
        w = X.T @ yr
        nw = np.linalg.norm(w)
        if nw < 1e-14:
            break
        w /= nw
        t = X @ w
        tt = t @ t
        if tt < 1e-14:
            break
        p = X.T @ t / tt
        qk = yr @ t / tt
        X -= np.outer(t, p)
        yr = yr - qk * t
        W.append(w)
        P.append(p)
        q.append(qk)
    return np.array(W).T, np.array(P).T, np.array(q)


def fit_dimred(train: Design, K: int, mode: str = "pcr", standardize: bool = True) -> LinearFit:
    """PCR or PLS with ``K`` components; ``K`` above the rank is truncated with a warning."""
    if K < 1:
        raise ModelError("K must be >= 1")
    coefs, ym, scaler = _dimred_components(train, mode, K, standardize)
    k = coefs.shape[0]
    return LinearFit(mode, {"K": k}, coef=coefs[k - 1], intercept=ym, scaler=scaler,
                     basis=f"top-{k} components", n_components=k)


def dimred_path(train: Design, Ks, mode: str, standardize: bool = True) -> list[LinearFit]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        coefs, ym, scaler = _dimred_components(train, mode, max(Ks), standardize)
    if caught:
        log.info("%s: %s", mode, caught[0].message)
    out, seen = [], set()
    for K in Ks:
        k = min(K, coefs.shape[0])
        if k in seen:
            continue
        seen.add(k)
        out.append(LinearFit(mode, {"K": k}, coef=coefs[k - 1], intercept=ym, scaler=scaler,
                             basis=f"top-{k} components", n_components=k))
    return out


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Per-feature quadratic spline terms ``z, (z-c_1)^2, ..., (z-c_{K-2})^2``."""

    knots: tuple
    keep: np.ndarray
    dropped: tuple = field(default=())

    @property
    def width(self):
        return 1 + len(self.knots[0]) if self.knots else 0

    @classmethod
    def fit(cls, X, n_basis: int = 4, knots=None):
        if n_basis < 3:
            raise ModelError("need at least 3 basis terms per feature")
        nk = n_basis - 2
        X = np.asarray(X, dtype=float)
        if knots is None:
            qs = np.arange(1, nk + 1) / (nk + 1)
            knots = [tuple(np.quantile(X[:, j], qs)) for j in range(X.shape[1])]
        else:
            knots = [tuple(np.atleast_1d(k)) for k in knots]
        sd = X.std(0)
        keep = sd > 1e-12 * np.maximum(1.0, np.abs(X.mean(0)))
        dropped = tuple(int(j) for j in np.flatnonzero(~keep))
        return cls(tuple(knots), keep, dropped)

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        cols = []
        for j in range(X.shape[1]):
            z = X[:, j]
            block = [z] + [(z - c) ** 2 for c in self.knots[j]]
            if not self.keep[j]:
                block = [np.zeros_like(z) for _ in block]
            cols.extend(block)
        return np.column_stack(cols)

    def groups(self, p):
        w = self.width
        return np.repeat(np.arange(p), w)

    def active_features(self, coef):
        w = self.width
        g = np.abs(coef.reshape(-1, w)).max(1)
        return int(np.sum(g > 1e-12))


@numba.njit(cache=True)
def _fista_sgl(G, c, lam, l1, width, step, b, tol, max_iter):
    p = len(c)
    ng = p // width
    z = b.copy()
    t = 1.0
    for it in range(max_iter):
        grad = G @ z - c
        u = z - step * grad
        new = np.empty(p)
        for i in range(p):
            a = abs(u[i]) - step * l1
            new[i] = np.sign(u[i]) * a if a > 0 else 0.0
        for g in range(ng):
            s = 0.0
            for i in range(g * width, (g + 1) * width):
                s += new[i] * new[i]
            nrm = np.sqrt(s)
            f = 1.0 - step * lam / nrm if nrm > 0 else 0.0
            if f < 0:
                f = 0.0
            for i in range(g * width, (g + 1) * width):
                new[i] *= f
        # adaptive restart when momentum points uphill
        if np.dot(z - new, new - b) > 0:
            t = 1.0
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        dmax = np.max(np.abs(new - b))
        z = new + ((t - 1.0) / tn) * (new - b)
        b = new
        t = tn
        if dmax < tol:
            return b, it + 1, True
    return b, max_iter, False


def fit_glm_groupspline(train: Design, n_basis: int = 4, lam: float = 1e-3, l1: float = 0.0,
                        knots=None, tol: float = 1e-9, max_iter: int = 20_000, warm=None,
                        _prep=None) -> LinearFit:
    """Sparse group lasso on standardized spline terms; groups are the terms of one feature.

    ``n_basis`` counts the constant, so 4 gives ``z`` plus two knot terms.
    """
    if _prep is None:
        _prep = glm_prepare(train, n_basis, knots)
    basis, scaler, G, c, ym, step = _prep
    hp = {"n_basis": n_basis, "lambda": lam, "l1": l1}
    if lam == 0 and l1 == 0:
        B = scaler.transform(basis.transform(train.X))
        coef, *_ = np.linalg.lstsq(B - B.mean(0), train.y - ym, rcond=None)
        return LinearFit("glm", hp, coef=coef, intercept=ym, scaler=scaler, basis="spline",
                         expand=basis)
    b0 = np.zeros(len(c)) if warm is None else np.array(warm, dtype=float)
    b, it, ok = _fista_sgl(G, c, float(lam), float(l1), basis.width, step, b0, tol, max_iter)
    if not ok:
        warnings.warn("group-lasso FISTA did not converge")
    return LinearFit("glm", hp, coef=b, intercept=ym, scaler=scaler, basis="spline", expand=basis,
                     converged=bool(ok), n_iter=int(it))


def glm_prepare(train: Design, n_basis: int = 4, knots=None):
    basis = SplineBasis.fit(train.X, n_basis, knots)
    if basis.dropped:
        log.info("spline GLM: constant features dropped %s", basis.dropped)
    B = basis.transform(train.X)
    scaler = Scaler.fit(B)
    Z = scaler.transform(B)
    Z -= Z.mean(0)
    ym = train.y.mean()
    n = train.n
    G = Z.T @ Z / n
    c = Z.T @ (train.y - ym) / n
    L = np.linalg.eigvalsh(G)[-1]
    step = 1.0 / max(L, 1e-12)
    return basis, scaler, G, c, ym, step


def glm_path(train: Design, lams, l1: float, n_basis: int = 4) -> list[LinearFit]:
    prep = glm_prepare(train, n_basis)
    fits = [None] * len(lams)
    warm = None
    for i in np.argsort(lams)[::-1]:
        f = fit_glm_groupspline(train, n_basis, float(lams[i]), l1, warm=warm, _prep=prep,
                                tol=1e-8, max_iter=5000)
        warm = f.coef
        fits[i] = f
    return fits
