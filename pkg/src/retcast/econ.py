"""GJR-GARCH variance, realized-variance proxies, variance losses and mean-variance utility."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


class EconError(ValueError):
    pass


@numba.njit(cache=True)
def _gjr_filter(eps, omega, alpha, beta, gamma, h0):
    """h[t] is the variance of eps[t]; h has one extra trailing forecast entry."""
    n = len(eps)
    q = len(alpha)
    p = len(beta)
    h = np.empty(n + 1)
    for t in range(n + 1):
        v = omega
        for i in range(1, q + 1):
            if t - i >= 0:
                e2 = eps[t - i] ** 2
                v += alpha[i - 1] * e2
                if eps[t - i] < 0:
                    v += gamma[i - 1] * e2
            else:
                v += (alpha[i - 1] + 0.5 * gamma[i - 1]) * h0
        for j in range(1, p + 1):
            v += beta[j - 1] * (h[t - j] if t - j >= 0 else h0)
        h[t] = v
    return h


@numba.njit(cache=True)
def _nll(eps, h):
    s = 0.0
    for t in range(len(eps)):
        s += math.log(h[t]) + eps[t] * eps[t] / h[t]
    return 0.5 * (s + len(eps) * math.log(2 * math.pi))


@dataclass(frozen=True, eq=False)
class GarchFit:
    omega: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    loglik: float
    h: np.ndarray
    converged: bool
    h0: float

    @property
    def params(self):
        return (self.omega, *self.alpha, *self.beta, *self.gamma)

    @property
    def bic(self):
        k = 1 + len(self.alpha) + len(self.beta) + len(self.gamma)
        return -2 * self.loglik + k * math.log(len(self.h) - 1)

    def filter(self, eps):
        """Conditional variances for a new residual series, continuing from ``h0``."""
        return garch_filter(eps, self.omega, self.alpha, self.beta, self.gamma, self.h0)


def garch_filter(eps, omega, alpha, beta, gamma, h0=None):
    eps = np.asarray(eps, dtype=float)
    h0 = float(np.var(eps)) if h0 is None else float(h0)
    return _gjr_filter(eps, float(omega), np.atleast_1d(np.asarray(alpha, float)),
                       np.atleast_1d(np.asarray(beta, float)), np.atleast_1d(np.asarray(gamma, float)), h0)


def simulate_gjr(n, omega, alpha, beta, gamma, seed=0, burn=500):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n + burn)
    h = omega / (1 - alpha - beta - gamma / 2)
    eps = np.empty(n + burn)
    for t in range(n + burn):
        eps[t] = math.sqrt(h) * z[t]
        h = omega + (alpha + gamma * (eps[t] < 0)) * eps[t] ** 2 + beta * h
    return eps[burn:]


def fit_gjr_garch(resid, p: int = 1, q: int = 1, restarts: int = 5, seed: int = 0) -> GarchFit:
    """Gaussian QMLE by Nelder-Mead; constraints enforced by a penalty, best of jittered restarts."""
    eps = np.asarray(resid, dtype=float)
    if len(eps) < 100:
        raise EconError("need at least 100 residuals")
    if not np.all(np.isfinite(eps)):
        raise EconError("non-finite residuals")
    var = float(np.var(eps))
    if var <= 1e-14 * max(1.0, float(np.mean(eps ** 2))):
        raise EconError("degenerate (constant) residual variance")
    # work on unit-variance residuals for conditioning, rescale omega at the end
    z = eps / math.sqrt(var)
    h0 = 1.0

    def unpack(x):
        return x[0], x[1:1 + q], x[1 + q:1 + q + p], x[1 + q + p:]

    def objective(x):
        om, a, b, g = unpack(x)
        viol = 0.0
        viol += max(0.0, 1e-8 - om)
        viol += np.sum(np.maximum(0.0, -a)) + np.sum(np.maximum(0.0, -b)) + np.sum(np.maximum(0.0, -g))
        pers = a.sum() + b.sum() + 0.5 * g.sum()
        viol += max(0.0, pers - 0.9999)
        if viol > 0:
            return 1e10 * (1 + viol)
        h = _gjr_filter(z, om, a, b, g, h0)
        return _nll(z, h)

    rng = np.random.default_rng(seed)
    base = np.concatenate([[0.05], np.full(q, 0.05 / q), np.full(p, 0.85 / p), np.full(q, 0.05 / q)])
    best = None
    for k in range(restarts):
        x0 = base if k == 0 else base * np.exp(rng.normal(0, 0.3, base.size))
        x0 = x0.copy()
        if x0[1:].sum() >= 0.99:
            x0[1:] *= 0.95 / x0[1:].sum()
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 20000, "maxfev": 40000})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or best.fun >= 1e10:
        raise EconError("GJR-GARCH estimation failed on every restart")
    if not best.success:
        warnings.warn(f"GJR-GARCH best restart did not report convergence: {best.message}")
    om, a, b, g = unpack(best.x)
    om = om * var
    h = _gjr_filter(eps, om, a, b, g, var)
    ll = -_nll(eps, h)
    return GarchFit(float(om), a.copy(), b.copy(), g.copy(), float(ll), h, bool(best.success), var)


def select_gjr_bic(resid, orders=((1, 1), (1, 2), (2, 1), (2, 2)), seed: int = 0) -> GarchFit:
    fits = [fit_gjr_garch(resid, p, q, seed=seed) for p, q in orders]
    return min(fits, key=lambda f: f.bic)


def realized_variance(intraday, mode: str = "intra", prev_close=None) -> np.ndarray:
    """Daily RV from a days x intervals price matrix; rows with gaps are skipped (NaN)."""
    P = np.atleast_2d(np.asarray(intraday, dtype=float))
    if mode not in ("intra", "whole"):
        raise EconError(f"unknown mode {mode!r}")
    lp = np.log(P)
    rv = np.sum(np.diff(lp, axis=1) ** 2, axis=1)
    if mode == "whole":
        if prev_close is None:
            prev = np.concatenate([[np.nan], P[:-1, -1]])
        else:
            prev = np.asarray(prev_close, dtype=float)
        rv = rv + (lp[:, 0] - np.log(prev)) ** 2
    bad = ~np.all(np.isfinite(P) & (P > 0), axis=1)
    if bad.any():
        log.warning("skipping %d days with missing intervals", int(bad.sum()))
        rv = np.where(bad, np.nan, rv)
    return rv


def variance_losses(h, hhat):
    h = np.asarray(h, dtype=float)
    hhat = np.asarray(hhat, dtype=float)
    if np.any(hhat <= 0) or np.any(h <= 0):
        raise EconError("variances must be positive")
    ratio = h / hhat
    return float(np.mean((h - hhat) ** 2)), float(np.mean(ratio - np.log(ratio) - 1))


@dataclass(frozen=True, eq=False)
class PortfolioReport:
    weights: np.ndarray
    port_returns: np.ndarray
    utility: np.ndarray
    gamma_ra: float
    avg_weight: float
    sd_weight: float
    avg_utility: float
    cer: float
    clipped: int = 0


def mv_portfolio(rhat, hhat, realized, rf=0.0, gamma_ra: float = 3.0, clip: float | None = None):
    """Mean-variance weights from time-t forecasts applied to the next-period return.

    ``utility`` is the per-day realized ``w r - gamma/2 w^2 h``; ``cer`` is the
    utility of the realized portfolio series.
    """
    rhat = np.asarray(rhat, dtype=float)
    hhat = np.asarray(hhat, dtype=float)
    r = np.asarray(realized, dtype=float)
    if not (len(rhat) == len(hhat) == len(r)):
        raise EconError("forecast, variance and realized series must align")
    if np.any(hhat <= 0):
        raise EconError("variance forecasts must be positive")
    if gamma_ra <= 0:
        raise EconError("risk aversion must be positive")
    rf = np.broadcast_to(np.asarray(rf, dtype=float), r.shape)
    w = rhat / (gamma_ra * hhat)
    n_clip = 0
    if clip is not None:
        n_clip = int(np.sum(np.abs(w) > clip))
        if n_clip:
            log.info("clipped %d weights at |w| <= %g", n_clip, clip)
        w = np.clip(w, -clip, clip)
    rp = w * r + (1 - w) * rf
    util = w * r - 0.5 * gamma_ra * w * w * hhat
    return PortfolioReport(w, rp, util, gamma_ra, float(w.mean()), float(w.std(ddof=1)) if len(w) > 1 else 0.0,
                           float(util.mean()), cer(rp, gamma_ra), n_clip)


def cer(port_returns, gamma_ra: float) -> float:
    rp = np.asarray(port_returns, dtype=float)
    var = float(np.var(rp, ddof=1)) if len(rp) > 1 else 0.0
    return float(np.mean(rp) - 0.5 * gamma_ra * var)
