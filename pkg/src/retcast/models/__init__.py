"""Model registry and validation-set tuning over the hyperparameter grids."""
from __future__ import annotations

from dataclasses import dataclass

from . import linear, nn, trees
from .base import Design, FittedModel, ModelError, mse

__all__ = ["Design", "FittedModel", "ModelError", "TuneResult", "MODEL_NAMES", "default_grid", "tune"]

MODEL_NAMES = ("ols", "lasso", "ridge", "enet", "pcr", "pls", "glm", "rf", "xgb", "xgb_h", "lgbm",
               "lgbm_h", "nn1", "nn2", "nn3", "nn4", "nn5")


@dataclass(frozen=True, eq=False)
class TuneResult:
    model: FittedModel
    params: dict
    val_mse: float
    n_candidates: int
    grid_losses: tuple = ()


def default_grid(name: str) -> dict:
    if name == "ols":
        return {}
    if name in ("lasso", "ridge"):
        return {"lambda": linear.PENALTY_GRID}
    if name == "enet":
        return {"lambda": linear.PENALTY_GRID, "rho": linear.L1_RATIOS}
    if name in ("pcr", "pls"):
        return {"K": tuple(range(1, 201))}
    if name == "glm":
        return {"knots": (3,), "lambda": linear.PENALTY_GRID, "l1": linear.GLM_L1_GRID}
    if name == "rf":
        return {"B": trees.N_ESTIMATORS, "max_depth": trees.DEPTHS, "max_features": trees.MAX_FEATURES,
                "min_leaf": (5,)}
    if name in ("xgb", "lgbm", "xgb_h", "lgbm_h"):
        g = {"B": trees.N_ESTIMATORS, "max_depth": trees.DEPTHS, "eta": trees.LEARNING_RATES,
             "lambda": (0.0,)}
        if name.endswith("_h"):
            g["xi_quantile"] = trees.HUBER_QUANTILES
        return g
    if name.startswith("nn") and name[2:].isdigit():
        return {"l1": nn.L1_GRID, "lr": nn.LR_GRID, "n_seeds": (10,), "widths": (nn.DESK_WIDTHS,),
                "max_epochs": (100,), "patience": (5,), "batch_norm": (True,), "dropout": (0.0,)}
    raise ModelError(f"unknown model {name!r}")


def _select(cands):
    """First minimum wins: candidates arrive ordered strongest regularization first."""
    best = None
    for model, params, v in cands:
        if best is None or v < best[2]:
            best = (model, params, v)
    return TuneResult(best[0], best[1], best[2], len(cands), tuple((p, v) for _, p, v in cands))


def tune(name: str, train: Design, val: Design, grid: dict | None = None, seed: int = 0) -> TuneResult:
    """Fit every grid point on ``train`` and keep the lowest validation MSE."""
    g = default_grid(name)
    if grid:
        unknown = set(grid) - set(g)
        if unknown:
            raise ModelError(f"unknown hyperparameters for {name}: {sorted(unknown)}")
        for k, v in grid.items():
            if k == "widths" and all(isinstance(x, int) for x in v):
                v = (tuple(v),)
            g[k] = tuple(v) if isinstance(v, (list, tuple, range)) else (v,)
    cands = []
    if name == "ols":
        m = linear.fit_ols(train)
        cands.append((m, {}, mse(val.y, m.predict(val.X))))
    elif name in ("lasso", "ridge", "enet"):
        rhos = {"lasso": (1.0,), "ridge": (0.0,)}.get(name, g.get("rho"))
        lams = sorted(g["lambda"], reverse=True)
        for rho in sorted(rhos, reverse=True):
            for m in linear.penalized_path(train, lams, float(rho)):
                cands.append((m, {"lambda": m.hyperparams["lambda"], "rho": rho},
                              mse(val.y, m.predict(val.X))))
    elif name in ("pcr", "pls"):
        for m in linear.dimred_path(train, sorted(g["K"]), name):
            cands.append((m, {"K": m.n_components}, mse(val.y, m.predict(val.X))))
    elif name == "glm":
        lams = sorted(g["lambda"], reverse=True)
        for knots in g["knots"]:
            for l1 in sorted(g["l1"], reverse=True):
                for m in linear.glm_path(train, lams, float(l1), n_basis=int(knots) + 1):
                    cands.append((m, {"knots": knots, "lambda": m.hyperparams["lambda"], "l1": l1},
                                  mse(val.y, m.predict(val.X))))
    elif name == "rf":
        Bs = sorted(g["B"])
        p = train.X.shape[1]
        feats = sorted({min(int(k), p) for k in g["max_features"]})
        for depth in sorted(g["max_depth"]):
            for K in feats:
                for ml in g["min_leaf"]:
                    m = trees.fit_random_forest(train, max(Bs), depth, K, seed=seed, min_leaf=int(ml))
                    for B, pred in m.staged_predict(val.X, Bs).items():
                        cands.append((m.truncated(B), {"B": B, "max_depth": depth, "max_features": K,
                                                       "min_leaf": ml}, mse(val.y, pred)))
    elif name in ("xgb", "lgbm", "xgb_h", "lgbm_h"):
        Bs = sorted(g["B"])
        growth = "leaf" if name.startswith("lgbm") else "level"
        huber = name.endswith("_h")
        xis = ([(q, x) for q, x in zip(g["xi_quantile"], trees.huber_xi_grid(train.y, g["xi_quantile"]))]
               if huber else [(None, 1.0)])
        for eta in sorted(g["eta"]):
            for depth in sorted(g["max_depth"]):
                for lam in sorted(g["lambda"], reverse=True):
                    for q, xi in xis:
                        m = trees.fit_gbm(train, max(Bs), float(eta), int(depth),
                                          loss="huber" if huber else "mse", xi=xi, growth=growth,
                                          lam=float(lam), seed=seed)
                        for B, pred in m.staged_predict(val.X, Bs).items():
                            hp = {"B": B, "eta": eta, "max_depth": depth, "lambda": lam}
                            if huber:
                                hp.update(xi_quantile=q, xi=xi)
                            cands.append((m.truncated(B), hp, mse(val.y, pred)))
    elif name.startswith("nn"):
        depth = int(name[2:])
        fixed = {k: g[k][0] for k in ("n_seeds", "widths", "max_epochs", "patience", "batch_norm",
                                      "dropout")}
        for l1 in sorted(g["l1"], reverse=True):
            for lr in sorted(g["lr"]):
                m = nn.fit_mlp(train, val, depth, widths=fixed["widths"], l1=float(l1), lr=float(lr),
                               max_epochs=int(fixed["max_epochs"]), patience=int(fixed["patience"]),
                               n_seeds=int(fixed["n_seeds"]), seed=seed,
                               batch_norm=bool(fixed["batch_norm"]), dropout=float(fixed["dropout"]))
                cands.append((m, {"l1": l1, "lr": lr}, mse(val.y, m.predict(val.X))))
    else:
        raise ModelError(f"unknown model {name!r}")
    return _select(cands)
