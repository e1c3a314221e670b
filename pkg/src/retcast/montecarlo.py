"""Simulation study: repeated draws, a single 7:2:1 split per draw, tuned models scored out of sample."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import split_plan
from .models import Design, tune
from .models.linear import fit_ols
from .simgen import DgpConfig, simulate_dgp

log = logging.getLogger(__name__)

# Reduced grids for repeated runs on a single core; the full grids are the library defaults.
FAST_GRIDS = {
    "xgb": {"B": (100, 200, 300, 400), "max_depth": (1, 2, 3), "eta": (0.1,)},
    "lgbm": {"B": (100, 200), "max_depth": (1, 2, 4, 6), "eta": (0.1,)},
    "xgb_h": {"B": (100, 200, 300, 400), "max_depth": (1, 2, 3), "eta": (0.1,), "xi_quantile": (0.9,)},
    "lgbm_h": {"B": (100, 200, 300, 400), "max_depth": (1, 2, 3), "eta": (0.1,), "xi_quantile": (0.9,)},
    "rf": {"B": (100, 200), "max_depth": (2, 4, 6), "max_features": (20, 50)},
    "pcr": {"K": tuple(range(1, 31))},
    "pls": {"K": tuple(range(1, 31))},
}
for _d in range(1, 6):
    FAST_GRIDS[f"nn{_d}"] = {"l1": (1e-4, 1e-3), "lr": (0.001, 0.01), "n_seeds": (3,)}


@dataclass
class RepResult:
    seed: int
    r2: dict
    selected: dict
    params: dict
    seconds: dict
    feature_names: tuple


@dataclass
class StudyResult:
    model: int
    reps: list = field(default_factory=list)

    def mean_r2(self, name):
        return float(np.mean([r.r2[name] for r in self.reps]))

    def selection_frequency(self, name):
        """Share of draws in which each feature enters the fitted model."""
        sel = np.array([r.selected[name] for r in self.reps], dtype=float)
        return dict(zip(self.reps[0].feature_names, sel.mean(0)))


def r2_mean(y, yhat, bench):
    return 1.0 - float(np.sum((y - yhat) ** 2)) / float(np.sum((y - bench) ** 2))


def run_rep(model: int, seed: int, names, T: int = 3600, P_C: int = 50, grids=None, scale: float = 100.0,
            oracle: bool = True) -> RepResult:
    grids = FAST_GRIDS if grids is None else grids
    panel, truth = simulate_dgp(DgpConfig(model=model, T=T, P_C=P_C, seed=seed))
    X = np.asarray(panel.features[:-1])
    y = scale * panel.returns
    w = split_plan(len(y))[0]
    tr, va, te = (np.asarray(r) for r in (w.train, w.val, w.test))
    bench = y[: te[0]].mean()
    r2, sel, params, secs = {}, {}, {}, {}
    for name in names:
        t0 = time.perf_counter()
        res = tune(name, Design(X[tr], y[tr]), Design(X[va], y[va]), grids.get(name), seed=seed)
        r2[name] = r2_mean(y[te], res.model.predict(X[te]), bench)
        params[name] = res.params
        coef = getattr(res.model, "coef", None)
        if coef is not None and getattr(res.model, "expand", None) is None and len(coef) == X.shape[1]:
            sel[name] = np.abs(coef) > 1e-12
        secs[name] = time.perf_counter() - t0
    if oracle:
        Z = truth.covariates[:-1]
        fit = fit_ols(Design(Z[np.r_[tr, va]], y[np.r_[tr, va]]))
        r2["oracle"] = r2_mean(y[te], fit.predict(Z[te]), bench)
    return RepResult(seed, r2, sel, params, secs, panel.feature_names)


def run_study(model: int, names, reps: int = 50, seed0: int = 0, progress=None, **kw) -> StudyResult:
    out = StudyResult(model)
    for k in range(reps):
        rep = run_rep(model, seed0 + k, names, **kw)
        out.reps.append(rep)
        if progress:
            progress(k, rep)
    return out
