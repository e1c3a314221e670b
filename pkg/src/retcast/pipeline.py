"""End-to-end runs: data, windows, tuned model zoo, ensembles, evaluation and reports."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .breaks import detect_breaks
from .combine import dmspe_weights, equal_weights, ensemble_predict, optimize_weights
from .config import RunConfig
from .dataset import (PricePanel, classify_states, load_csv, monthly_standardize, window_plan_from_panel)
from .econ import fit_gjr_garch, mv_portfolio
from .evaluate import (ForecastSet, ar1_benchmark, complexity_panel, cumsfe, cw_test, dm_test, r2_oos,
                       rrmse, state_predictability, state_r2, trend_decompose)
from .interpret import aggregate_importance, r2_reduction
from .models import MODEL_NAMES, Design, tune
from .simgen import DgpConfig, simulate_dgp

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def fmt(v) -> str:
    """Six significant digits for floats; everything else via str."""
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return f"{float(v):.6g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path: Path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def task_seed(seed: int, window: int, model: str) -> int:
    ss = np.random.SeedSequence([int(seed), int(window), MODEL_NAMES.index(model)])
    return int(ss.generate_state(1)[0])


def load_panel(cfg: RunConfig):
    d = cfg.data
    truth = None
    if d.source == "simulate":
        dgp = DgpConfig(model=d.model, T=d.T, P_C=d.P_C, P_x=d.P_x, seed=cfg.seed,
                        eps_dof=d.eps_dof if d.eps_dof == "normal" else float(d.eps_dof),
                        month_len=d.month_len)
        panel, truth = simulate_dgp(dgp)
    else:
        panel = load_csv(d.path, month_ids=d.month_ids)
    if d.monthly_standardize:
        panel = monthly_standardize(panel)
    return panel, truth


def fit_window(X, y, window, name, grid, seed, importance=False):
    """Tune one model on a window's training/validation rows and forecast its test rows.

    Only rows inside ``window.train``/``window.val`` reach the fitting path.
    """
    tr, va, te = (np.asarray(r) for r in (window.train, window.val, window.test))
    res = tune(name, Design(X[tr], y[tr]), Design(X[va], y[va]), grid, seed)
    out = {"params": res.params, "val_mse": res.val_mse, "grid_losses": res.grid_losses, "complexity": float(res.model.complexity),
           "val_pred": res.model.predict(X[va]), "test_pred": res.model.predict(X[te])}
    if importance:
        out["importance"] = r2_reduction(res.model, X[tr], y[tr])
    return out


_SHARED = {}


def _init_worker(X, y, plan):
    _SHARED.update(X=X, y=y, plan=plan)


def _run_task(args):
    k, name, grid, seed, importance = args
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = fit_window(_SHARED["X"], _SHARED["y"], _SHARED["plan"][k], name, grid, seed, importance)
    out["warnings"] = sorted({f"window {k} {name}: {w.message}" for w in caught})
    return out


@dataclass
class Forecasts:
    fs: ForecastSet
    hyper: list
    weights: list
    complexity: dict
    importance: dict
    history: np.ndarray
    feature_names: tuple
    grid_losses: list
    notes: list = field(default_factory=list)


def _ensembles(cfg, val_preds, val_truth, test_preds, k):
    out, wrows = {}, []
    for spec in cfg.ensembles:
        kind, _, arg = spec.partition(":")
        if kind == "avg":
            ew = equal_weights(len(val_preds))
            name = "ens_avg"
        elif kind == "op":
            ew = optimize_weights(val_preds, val_truth, lam=0.0)
            name = "ens_op"
        elif kind == "wp":
            ew = optimize_weights(val_preds, val_truth, lam=None)
            name = "ens_wp"
        else:
            theta = float(arg or 1.0)
            ew = dmspe_weights((val_truth - val_preds) ** 2, theta)
            name = f"ens_dmspe{theta:g}"
        out[name] = ensemble_predict(ew, test_preds)
        wrows.extend((k, name, m, float(w), ew.lam if ew.lam is not None else "")
                     for m, w in zip(cfg.models, ew.weights))
    return out, wrows


def build_forecasts(cfg: RunConfig, panel: PricePanel) -> Forecasts:
    plan = window_plan_from_panel(panel, "721" if cfg.windows.scheme == "721" else "expanding",
                                  cfg.windows.train0_months, cfg.windows.val_months)
    X = np.ascontiguousarray(panel.features[:-1])
    r = panel.returns
    y = r * cfg.target_scale
    tasks = [(k, m, cfg.grids.get(m), task_seed(cfg.seed, k, m), cfg.extras.importance)
             for k in range(len(plan)) for m in cfg.models]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(X, y, plan)) as ex:
            results = list(ex.map(_run_task, tasks, chunksize=1))
    else:
        _init_worker(X, y, plan)
        results = [_run_task(t) for t in tasks]
    notes = sorted({w for res in results for w in res.pop("warnings")})
    by = {(t[0], t[1]): res for t, res in zip(tasks, results)}

    idx_all, fc = [], {m: [] for m in cfg.models}
    month, hist, hyper, wrows, losses = [], [], [], [], []
    comp = {m: [] for m in cfg.models}
    imp = {m: [] for m in cfg.models}
    for k, w in enumerate(plan):
        te = np.asarray(w.test)
        va = np.asarray(w.val)
        idx_all.append(te)
        month.append(panel.month_id[te])
        hist.append(np.full(len(te), r[: va[-1] + 1].mean()))
        vp = np.array([by[(k, m)]["val_pred"] for m in cfg.models])
        tp = np.array([by[(k, m)]["test_pred"] for m in cfg.models])
        for m in cfg.models:
            res = by[(k, m)]
            fc[m].append(res["test_pred"] / cfg.target_scale)
            comp[m].append(np.full(len(te), res["complexity"]))
            hyper.append((k, m, json.dumps(res["params"], sort_keys=True, default=float), res["val_mse"],
                          res["complexity"]))
            losses.extend((k, m, json.dumps(p, sort_keys=True, default=float), v) for p, v in res["grid_losses"])
            if "importance" in res:
                imp[m].append(res["importance"])
        ens, rows = _ensembles(cfg, vp, y[va], tp, k)
        wrows.extend(rows)
        for name, pred in ens.items():
            fc.setdefault(name, []).append(pred / cfg.target_scale)
    idx = np.concatenate(idx_all)
    ar1, _ = ar1_benchmark(panel, plan)
    r_prev = np.where(idx > 0, r[np.maximum(idx - 1, 0)], np.nan)
    forecasts = {m: np.concatenate(v) for m, v in fc.items()}
    fs = ForecastSet(panel.dates[idx], r[idx], panel.prices[idx], panel.prices[idx + 1], forecasts,
                     np.concatenate(month), ar1, np.concatenate(hist), r_prev, tuple(forecasts))
    importance = {m: aggregate_importance(v, panel.feature_names) for m, v in imp.items() if v}
    comp = {m: np.concatenate(v) for m, v in comp.items()}
    return Forecasts(fs, hyper, wrows, comp, importance, r[: idx[0]], panel.feature_names, losses, notes)


def write_forecasts(fc: Forecasts, out: Path):
    fs = fc.fs
    cols = ["date", "month", "r", "p0", "p1", "r_prev", "ar1", "hist_mean"] + list(fs.models)
    with (out / "forecasts.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(fs)):
            row = [str(fs.dates[i]), int(fs.month[i])] + [repr(float(a[i])) for a in
                                                         (fs.r, fs.p0, fs.p1, fs.r_prev, fs.ar1, fs.hist_mean)]
            row += [repr(float(fs.forecasts[m][i])) for m in fs.models]
            w.writerow(row)
    with (out / "history.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r"])
        w.writerows([[repr(float(v))] for v in fc.history])
    return [out / "forecasts.csv", out / "history.csv"]


def read_forecasts(out: Path):
    import pandas as pd
    df = pd.read_csv(out / "forecasts.csv", float_precision="round_trip")
    base = ["date", "month", "r", "p0", "p1", "r_prev", "ar1", "hist_mean"]
    models = [c for c in df.columns if c not in base]
    fs = ForecastSet(df["date"].to_numpy(), df["r"].to_numpy(), df["p0"].to_numpy(), df["p1"].to_numpy(),
                     {m: df[m].to_numpy() for m in models}, df["month"].to_numpy(), df["ar1"].to_numpy(),
                     df["hist_mean"].to_numpy(), df["r_prev"].to_numpy(), tuple(models))
    hist_path = out / "history.csv"
    history = pd.read_csv(hist_path, float_precision="round_trip")["r"].to_numpy() if hist_path.exists() else None
    return fs, history


def _monthly_r2(fs: ForecastSet):
    months = list(dict.fromkeys(fs.month.tolist()))
    panel = {}
    for m in fs.models:
        vals = []
        for mo in months:
            mask = fs.month == mo
            try:
                vals.append(r2_oos(fs, m, "mean", mask))
            except Exception:
                vals.append(float("nan"))
        panel[m] = np.array(vals)
    return months, panel


def evaluate_stage(cfg: RunConfig, fs: ForecastSet, out: Path, complexity=None):
    files, notes, summary = [], [], {}
    bench = [b for b in cfg.evaluate.benchmarks]
    rows = []
    for m in fs.models:
        row = [m]
        for b in bench:
            try:
                row.append(r2_oos(fs, m, b))
            except Exception as exc:
                row.append(float("nan"))
                notes.append(f"r2 {m}/{b}: {exc}")
        rows.append(row)
    files.append(write_table(out / "r2_oos.csv", ["model"] + bench, rows))
    summary["r2_oos"] = {r[0]: dict(zip(bench, r[1:])) for r in rows}

    ref = cfg.evaluate.reference
    rows = []
    if ref in fs.forecasts:
        for m in fs.models:
            rows.append([m, rrmse(fs, m, ref)[0]])
    files.append(write_table(out / "rrmse.csv", ["model", "rrmse"], rows))

    rows = []
    ms = list(fs.models)
    for i, a in enumerate(ms):
        for b in ms[i + 1:]:
            try:
                t = dm_test(fs, a, b, monthly=cfg.evaluate.dm_monthly)
                rows.append([a, b, t.stat, t.p_two, t.n])
            except Exception as exc:
                notes.append(f"dm {a}/{b}: {exc}")
    files.append(write_table(out / "dm_pairwise.csv", ["model_a", "model_b", "stat", "p_two", "n"], rows))

    rows = []
    bench_fc = {"mean": fs.hist_mean, "zero": np.zeros(len(fs)), "ar1": fs.ar1}
    for m in ms:
        for bname, bf in bench_fc.items():
            for unit, monthly in (("month", True), ("day", False)):
                try:
                    t = dm_test(fs, bf, m, monthly=monthly)
                    c = cw_test(fs, bf, m, monthly=monthly)
                    rows.append([m, bname, unit, t.stat, t.p_one, c.stat, c.p_one])
                except Exception as exc:
                    notes.append(f"dm/cw {m} vs {bname} ({unit}): {exc}")
    files.append(write_table(out / "dm_benchmark.csv",
                             ["model", "benchmark", "unit", "dm_stat", "dm_p_one", "cw_stat", "cw_p_one"], rows))

    months, mpanel = _monthly_r2(fs)
    files.append(write_table(out / "monthly_r2.csv", ["model", "month", "r2_mean"],
                             [[m, mo, mpanel[m][i]] for m in ms for i, mo in enumerate(months)]))
    files.append(write_table(out / "cumsfe.csv", ["model", "date", "cumsfe"],
                             [[m, fs.dates[i], v] for m in ms for i, v in enumerate(cumsfe(fs, m))]))

    rows = []
    ok = np.isfinite(fs.r_prev)
    for m in ms:
        tr = trend_decompose(fs.r_prev[ok], fs.r[ok], fs.forecasts[m][ok])
        for panel, vals in tr.four_scenarios().items():
            rows.append([m, panel] + [vals.get(k, "") for k in ("FT", "ERT", "AWT", "AST", "Gain", "Over",
                                                                "Under")])
    files.append(write_table(out / "trend.csv",
                             ["model", "panel", "FT", "ERT", "AWT", "AST", "Gain", "Over", "Under"], rows))

    srows, prows = [], []
    try:
        mvar = np.array([np.var(fs.r[fs.month == mo]) for mo in months])
        labels_m = classify_states(mvar, "tercile", name="monthly return variance").labels
        day_labels = np.array([labels_m[months.index(mo)] for mo in fs.month])
        sr = state_r2(fs, day_labels, "mean")
        for s, d in sr.items():
            for m, v in d.items():
                srows.append([s, m, v])
        ens = [m for m in ms if m.startswith("ens_")]
        for variant, excl in (("wE", ()), ("oE", ens)):
            for s, (m, v) in state_predictability(sr, exclude=excl).items():
                prows.append([s, variant, m, v])
    except Exception as exc:
        notes.append(f"states: {exc}")
    files.append(write_table(out / "state_r2.csv", ["state", "model", "r2_mean"], srows))
    files.append(write_table(out / "predictability.csv", ["state", "variant", "model", "r2_mean"], prows))

    crow = []
    if complexity:
        base = [m for m in complexity if m in mpanel]
        try:
            Y = np.array([mpanel[m] for m in base])
            C = np.array([[complexity[m][fs.month == mo][0] for mo in months] for m in base])
            keep = np.all(np.isfinite(Y), axis=0)
            pf = complexity_panel(Y[:, keep], C[:, keep])
            crow.append([pf.alpha, pf.se, pf.n_models, pf.n_months])
        except Exception as exc:
            notes.append(f"complexity panel: {exc}")
    files.append(write_table(out / "complexity_panel.csv", ["alpha", "se", "n_models", "n_months"], crow))
    return files, notes, summary, (months, mpanel)


def breaks_stage(monthly, importance, out: Path):
    months, mpanel = monthly
    rows, notes = [], []
    series = [(f"monthly_r2:{m}", v) for m, v in mpanel.items()]
    for m, rep in (importance or {}).items():
        for j, f in enumerate(rep.features):
            series.append((f"importance:{m}:{f}", rep.per_window[:, j]))
    for sid, v in series:
        v = np.asarray(v, dtype=float)
        v = v[np.isfinite(v)]
        if len(v) < 4:
            notes.append(f"breaks {sid}: fewer than 4 points")
            continue
        br = detect_breaks(v, sid)
        for bp in br.pelt_breakpoints:
            rows.append([sid, "pelt", bp, br.beta, ""])
        rows.append([sid, "pettitt", br.pettitt.index, br.pettitt.K, br.pettitt.p])
    return [write_table(out / "breaks.csv", ["series", "method", "index", "stat", "p"], rows)], notes


def portfolio_stage(cfg: RunConfig, fs: ForecastSet, history, out: Path):
    rows, notes = [], []
    if history is None or len(history) < 100:
        notes.append("portfolio: fewer than 100 pre-OOS returns; skipped")
    else:
        pre = history - history.mean()
        g = fit_gjr_garch(pre, seed=cfg.seed)
        for m in fs.models:
            e = fs.r - fs.forecasts[m]
            h = g.filter(np.concatenate([pre, e]))[len(pre): len(pre) + len(e)]
            for gam in cfg.extras.gamma_ra:
                rep = mv_portfolio(fs.forecasts[m], h, fs.r, cfg.extras.risk_free, float(gam),
                                   cfg.extras.weight_clip)
                rows.append([m, gam, rep.avg_weight, rep.sd_weight, rep.avg_utility, rep.cer])
    return [write_table(out / "portfolio.csv",
                        ["model", "gamma_ra", "avg_weight", "sd_weight", "avg_utility", "cer"], rows)], notes


def report_digest(files) -> str:
    h = hashlib.sha256()
    for f in sorted(files, key=lambda p: Path(p).name):
        h.update(Path(f).name.encode())
        h.update(sha256(f).encode())
    return h.hexdigest()


def write_manifest(out: Path, cfg: RunConfig, files, timings, notes, status="ok", failed_stage=None,
                   extra=None):
    man = {"version": __version__, "status": status, "failed_stage": failed_stage, "seed": cfg.seed,
           "config": cfg.to_dict(), "outputs": {Path(f).name: sha256(f) for f in files},
           "report_digest": report_digest(files) if files else None, "timings": timings,
           "warnings": list(notes)}
    if extra:
        man.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=1, sort_keys=True, default=str))
    return man


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage and write reports plus ``manifest.json`` into ``cfg.out``."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files, notes, timings = [], [], {}
    stage = "data"
    extra = {}
    try:
        t0 = time.perf_counter()
        panel, _ = load_panel(cfg)
        notes.extend(panel.notes)
        timings[stage] = time.perf_counter() - t0

        stage = "forecast"
        t0 = time.perf_counter()
        fc = build_forecasts(cfg, panel)
        notes.extend(fc.notes)
        files += write_forecasts(fc, out)
        files.append(write_table(out / "hyperparams.csv", ["window", "model", "params", "val_mse", "complexity"],
                                 fc.hyper))
        files.append(write_table(out / "grid_losses.csv", ["window", "model", "params", "val_mse"],
                                 fc.grid_losses))
        files.append(write_table(out / "weights.csv", ["window", "ensemble", "model", "weight", "lambda"],
                                 fc.weights))
        extra["n_windows"] = len(fc.hyper) // len(cfg.models)
        extra["models"] = list(cfg.models)
        timings[stage] = time.perf_counter() - t0

        stage = "evaluate"
        t0 = time.perf_counter()
        f, n, summary, monthly = evaluate_stage(cfg, fc.fs, out, fc.complexity)
        files += f
        notes += n
        timings[stage] = time.perf_counter() - t0

        if fc.importance:
            stage = "importance"
            rows = [[m, feat, rep.normalized[j], rep.raw[j]] for m, rep in fc.importance.items()
                    for j, feat in enumerate(rep.features)]
            files.append(write_table(out / "importance.csv", ["model", "feature", "value", "raw"], rows))

        if cfg.extras.breaks:
            stage = "breaks"
            t0 = time.perf_counter()
            f, n = breaks_stage(monthly, fc.importance, out)
            files += f
            notes += n
            timings[stage] = time.perf_counter() - t0

        if cfg.extras.portfolio:
            stage = "portfolio"
            t0 = time.perf_counter()
            f, n = portfolio_stage(cfg, fc.fs, fc.history, out)
            files += f
            notes += n
            timings[stage] = time.perf_counter() - t0

        stage = "report"
        sp = out / "summary.json"
        sp.write_text(json.dumps({"r2_oos": summary["r2_oos"], "n_oos": len(fc.fs)}, indent=1, sort_keys=True,
                                 default=fmt))
        files.append(sp)
    except Exception as exc:
        write_manifest(out, cfg, [f for f in files if Path(f).exists()], timings, notes, "failed", stage, extra)
        raise PipelineError(stage, exc) from exc
    return write_manifest(out, cfg, files, timings, notes, extra=extra)
