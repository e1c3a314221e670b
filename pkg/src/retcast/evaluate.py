"""Out-of-sample scoring, forecast comparison tests and performance decompositions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dataset import PricePanel, WindowPlan

log = logging.getLogger(__name__)

BENCHMARKS = ("lagprice", "ar1", "mean", "zero")


class EvalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """OOS rows aligned across models.  Returns are in log units.

    ``r`` is the realized ``r_{t+1}``, ``p0``/``p1`` are ``p_t``/``p_{t+1}``,
    ``r_prev`` is ``r_t`` (NaN where unavailable) and ``month`` labels the test window.
    """

    dates: np.ndarray
    r: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    forecasts: dict
    month: np.ndarray
    ar1: np.ndarray | None = None
    hist_mean: np.ndarray | None = None
    r_prev: np.ndarray | None = None
    order: tuple = field(default=())

    def __post_init__(self):
        n = len(self.r)
        for k, v in self.forecasts.items():
            if len(v) != n:
                raise EvalError(f"forecast {k!r} has {len(v)} rows, expected {n}")
        if not self.order:
            object.__setattr__(self, "order", tuple(self.forecasts))

    @property
    def models(self):
        return self.order

    def __len__(self):
        return len(self.r)

    def with_forecast(self, name, values):
        fc = dict(self.forecasts)
        fc[name] = np.asarray(values, dtype=float)
        order = self.order + ((name,) if name not in self.order else ())
        return ForecastSet(self.dates, self.r, self.p0, self.p1, fc, self.month, self.ar1,
                           self.hist_mean, self.r_prev, order)


def _sel(a, subset):
    a = np.asarray(a, dtype=float)
    return a if subset is None else a[subset]


def benchmark_sse(fs: ForecastSet, benchmark: str, subset=None) -> float:
    r = _sel(fs.r, subset)
    if benchmark == "lagprice":
        d = _sel(fs.p1, subset) - _sel(fs.p0, subset)
    elif benchmark == "ar1":
        if fs.ar1 is None:
            raise EvalError("AR(1) benchmark forecasts missing")
        d = _sel(fs.p1, subset) - _sel(fs.p0, subset) * np.exp(_sel(fs.ar1, subset))
    elif benchmark == "mean":
        if fs.hist_mean is None:
            raise EvalError("historical mean benchmark missing")
        d = r - _sel(fs.hist_mean, subset)
    elif benchmark == "zero":
        d = r
    else:
        raise EvalError(f"unknown benchmark {benchmark!r}")
    return float(d @ d)


def model_sse(fs: ForecastSet, rhat, benchmark: str, subset=None) -> float:
    rhat = _sel(rhat, subset)
    if benchmark in ("lagprice", "ar1"):
        d = _sel(fs.p1, subset) - _sel(fs.p0, subset) * np.exp(rhat)
    else:
        d = _sel(fs.r, subset) - rhat
    return float(d @ d)


def r2_oos(fs: ForecastSet, model, benchmark: str = "mean", subset=None) -> float:
    """Out-of-sample R^2; price-space for ``lagprice``/``ar1``, return-space otherwise."""
    if subset is not None:
        subset = np.asarray(subset)
        if subset.dtype == bool and not subset.any() or subset.size == 0:
            raise EvalError("empty subset")
    rhat = fs.forecasts[model] if isinstance(model, str) else model
    den = benchmark_sse(fs, benchmark, subset)
    if den <= 0:
        raise EvalError("degenerate benchmark")
    return 1.0 - model_sse(fs, rhat, benchmark, subset) / den


def ar1_benchmark(panel: PricePanel, plan: WindowPlan, target_rows=None):
    """Per-window ``r_{t+1} = a + b p_t`` fitted on training rows, applied to the test rows.

    Returns (forecasts over concatenated test rows, per-window (a, b)).
    """
    p = panel.prices
    r = panel.returns
    out, coefs = [], []
    for w in plan:
        tr = np.asarray(w.train)
        x = p[tr]
        if np.var(x) <= 1e-14 * max(1.0, np.mean(x) ** 2):
            log.warning("constant price in training window; AR(1) falls back to the mean")
            a, b = float(np.mean(r[tr])), 0.0
        else:
            b, a = np.polyfit(x, r[tr], 1)
        te = np.asarray(w.test)
        out.append(a + b * p[te])
        coefs.append((float(a), float(b)))
    return np.concatenate(out), coefs


def monthly_rmse(fs: ForecastSet, model):
    e = fs.r - fs.forecasts[model]
    months = _ordered_unique(fs.month)
    return months, np.array([math.sqrt(np.mean(e[fs.month == m] ** 2)) for m in months])


def _ordered_unique(a):
    _, idx = np.unique(a, return_index=True)
    return a[np.sort(idx)]


def rrmse(fs: ForecastSet, model, reference: str = "ols"):
    """Average of monthly RMSE ratios, plus the monthly ratios themselves."""
    _, a = monthly_rmse(fs, model)
    _, b = monthly_rmse(fs, reference)
    if np.any(b <= 0):
        raise EvalError("zero reference RMSE in a month")
    ratio = a / b
    return float(ratio.mean()), ratio


def nw_lag(n: int) -> int:
    return int(math.floor(4 * (n / 100) ** (2 / 9)))


def newey_west_var(d, lags: int | None = None) -> float:
    """Long-run variance of ``d`` with Bartlett weights."""
    d = np.asarray(d, dtype=float)
    n = len(d)
    L = nw_lag(n) if lags is None else int(lags)
    u = d - d.mean()
    v = u @ u / n
    for l in range(1, min(L, n - 1) + 1):
        v += 2 * (1 - l / (L + 1)) * (u[l:] @ u[:-l]) / n
    return float(v)


@dataclass(frozen=True)
class TestResult:
    stat: float
    p_two: float
    p_one: float
    n: int
    lags: int


def _t_test(d, lags):
    n = len(d)
    if n < 8:
        raise EvalError(f"need at least 8 comparison units, got {n}")
    L = nw_lag(n) if lags in (None, "auto") else int(lags)
    var = newey_west_var(d, L)
    if not var > 0:
        raise EvalError("identical forecasts")
    stat = float(np.mean(d) / math.sqrt(var / n))
    return TestResult(stat, float(2 * stats.norm.sf(abs(stat))), float(stats.norm.sf(stat)), n, L)


def _aggregate(d, month, monthly):
    if not monthly:
        return d
    return np.array([d[month == m].mean() for m in _ordered_unique(month)])


def dm_test(fs: ForecastSet, model_a, model_b, monthly: bool = True, nw_lags="auto") -> TestResult:
    """Diebold-Mariano on ``e_a^2 - e_b^2``; a positive statistic favours ``model_b``.

    ``p_one`` is for the alternative that ``model_b`` is more accurate.
    """
    fa = fs.forecasts[model_a] if isinstance(model_a, str) else np.asarray(model_a)
    fb = fs.forecasts[model_b] if isinstance(model_b, str) else np.asarray(model_b)
    d = (fs.r - fa) ** 2 - (fs.r - fb) ** 2
    return _t_test(_aggregate(d, fs.month, monthly), nw_lags)


def cw_test(fs: ForecastSet, small, large, monthly: bool = True, nw_lags="auto") -> TestResult:
    """Clark-West adjusted comparison of a nested small model against a larger one."""
    fa = fs.forecasts[small] if isinstance(small, str) else np.asarray(small)
    fb = fs.forecasts[large] if isinstance(large, str) else np.asarray(large)
    d = (fs.r - fa) ** 2 - (fs.r - fb) ** 2 + (fa - fb) ** 2
    return _t_test(_aggregate(d, fs.month, monthly), nw_lags)


def cumsfe(fs: ForecastSet, model) -> np.ndarray:
    e = fs.r - (fs.forecasts[model] if isinstance(model, str) else np.asarray(model))
    return np.cumsum(e * e)


def state_r2(fs: ForecastSet, labels, benchmark: str = "mean", models=None) -> dict:
    """R^2 within each state: {state: {model: value}}."""
    labels = np.asarray(labels)
    out = {}
    for s in dict.fromkeys(labels.tolist()):
        mask = labels == s
        out[s] = {m: r2_oos(fs, m, benchmark, mask) for m in (models or fs.models)}
    return out


def state_predictability(r2_by_state: dict, exclude=()) -> dict:
    """Best model and its R^2 per state; ``exclude`` drops e.g. ensemble rows."""
    res = {}
    for s, scores in r2_by_state.items():
        cand = [(m, v) for m, v in scores.items() if m not in exclude]
        if not cand:
            raise EvalError(f"no models for state {s!r}")
        best = cand[0]
        for m, v in cand[1:]:
            if v > best[1]:
                best = (m, v)
        res[s] = best
    return res


TREND_CLASSES = ("FT", "RWT", "RST")
PERF_CLASSES = ("DL", "DG", "UG", "UL")


def trend_classify(r_prev, r_next, rhat):
    r_prev, r_next, rhat = (np.asarray(a, dtype=float) for a in (r_prev, r_next, rhat))
    up = r_next >= r_prev
    ft = np.where(up, rhat < r_prev, rhat > r_prev)
    rwt = np.where(up, (r_prev <= rhat) & (rhat < r_next), (r_next < rhat) & (rhat <= r_prev))
    cls = np.where(ft, "FT", np.where(rwt, "RWT", "RST"))
    return cls.astype(object)


def perf_classify(r_next, rhat, bench):
    """Position of the forecast against the band ``r_{t+1} +/- |b - r_{t+1}|``.

    An exact hit counts as an upward gain.
    """
    r_next, rhat, bench = (np.asarray(a, dtype=float) for a in (r_next, rhat, bench))
    half = np.abs(bench - r_next)
    lo, hi = r_next - half, r_next + half
    cls = np.where(rhat < lo, "DL",
                   np.where(rhat < r_next, "DG", np.where(rhat <= hi, "UG", "UL")))
    return cls.astype(object)


@dataclass(frozen=True, eq=False)
class TrendResult:
    trend: np.ndarray
    perf: np.ndarray
    up: np.ndarray

    def table(self) -> dict:
        """Joint trend/performance frequencies within the down, up and all panels."""
        out = {}
        for panel, mask in (("down", ~self.up), ("up", self.up), ("all", np.ones_like(self.up))):
            n = mask.sum()
            out[panel] = {(t, p): (float(np.sum(mask & (self.trend == t) & (self.perf == p)) / n)
                                   if n else 0.0) for t in TREND_CLASSES for p in PERF_CLASSES}
        return out

    def four_scenarios(self) -> dict:
        """False, excessive, appropriate-weak and appropriate-strong trend shares per panel."""
        gain = np.isin(self.perf, ("DG", "UG"))
        cats = {"FT": self.trend == "FT", "ERT": (self.trend == "RST") & ~gain,
                "AWT": self.trend == "RWT", "AST": (self.trend == "RST") & gain}
        out = {}
        for panel, mask in (("down", ~self.up), ("up", self.up), ("all", np.ones_like(self.up))):
            n = mask.sum()
            row = {k: float(np.sum(v & mask) / n) if n else 0.0 for k, v in cats.items()}
            if panel == "all":
                row["Gain"] = row["AWT"] + row["AST"]
                row["Over"] = row["ERT"] + row["AST"]
                row["Under"] = row["FT"] + row["AWT"]
            out[panel] = row
        return out


def trend_decompose(r_prev, r_next, rhat, bench=None) -> TrendResult:
    """Trend and benchmark-band classes per day; ``bench=None`` uses the lag ``r_t``."""
    r_prev = np.asarray(r_prev, dtype=float)
    bench = r_prev if bench is None else bench
    return TrendResult(trend_classify(r_prev, r_next, rhat), perf_classify(r_next, rhat, bench),
                       np.asarray(r_next) >= r_prev)


@dataclass(frozen=True)
class PanelFit:
    alpha: float
    se: float
    n_models: int
    n_months: int


def _zscore_rows(a):
    mu = a.mean(1, keepdims=True)
    sd = a.std(1, ddof=1, keepdims=True)
    return np.where(sd > 0, (a - mu) / np.where(sd > 0, sd, 1.0), 0.0)


def complexity_panel(r2_panel, complexity, standardize: bool = True) -> PanelFit:
    """Two-way fixed-effects slope of monthly R^2 on (within-model standardized) complexity.

    Standard errors are clustered by model with the G/(G-1) correction.
    """
    y = np.asarray(r2_panel, dtype=float)
    x = np.asarray(complexity, dtype=float)
    if y.shape != x.shape or y.ndim != 2:
        raise EvalError("panels must be balanced model x month matrices")
    G, T = y.shape
    if G < 2 or T < 2:
        raise EvalError("need at least 2 models and 2 months")
    if standardize:
        x = _zscore_rows(x)
    within = lambda a: a - a.mean(1, keepdims=True) - a.mean(0, keepdims=True) + a.mean()
    yt, xt = within(y), within(x)
    sxx = float(np.sum(xt * xt))
    if sxx <= 0:
        raise EvalError("complexity has no within variation")
    alpha = float(np.sum(xt * yt) / sxx)
    u = yt - alpha * xt
    score = np.sum(xt * u, axis=1)
    var = (G / (G - 1)) * float(score @ score) / sxx ** 2
    return PanelFit(alpha, math.sqrt(var), G, T)
