"""Run configuration: dataclasses plus an INI reader.

Example::

    [data]
    source = simulate        ; or csv
    model = 1
    T = 600
    P_C = 10

    [windows]
    scheme = expanding       ; or 721
    train0_months = 8
    val_months = 4

    [models]
    names = ols, lasso, xgb

    [grid.lasso]
    lambda = 0.001, 0.01, 0.1

    [ensembles]
    methods = avg, op, wp, dmspe:1, dmspe:0.9

    [run]
    seed = 7
    out = results
"""
from __future__ import annotations

import ast
import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .models import MODEL_NAMES, default_grid


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "simulate"
    path: str = ""
    model: int = 1
    T: int = 600
    P_C: int = 10
    P_x: int = 2
    eps_dof: str = "normal"
    month_len: int = 30
    monthly_standardize: bool = False
    month_ids: str = "calendar"


@dataclass
class WindowConfig:
    scheme: str = "expanding"
    train0_months: int = 8
    val_months: int = 4


@dataclass
class EvalConfig:
    benchmarks: tuple = ("lagprice", "ar1", "mean", "zero")
    reference: str = "ols"
    dm_monthly: bool = True
    state_variable: str = "return_variance"


@dataclass
class ExtrasConfig:
    importance: bool = False
    breaks: bool = True
    portfolio: bool = True
    gamma_ra: tuple = (3.0,)
    risk_free: float = 0.0
    weight_clip: float | None = None


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    models: tuple = ("ols",)
    grids: dict = field(default_factory=dict)
    ensembles: tuple = ("avg", "op", "wp", "dmspe:1", "dmspe:0.9")
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    extras: ExtrasConfig = field(default_factory=ExtrasConfig)
    seed: int = 0
    jobs: int = 1
    out: str = "results"
    target_scale: float = 100.0

    def validate(self):
        if self.data.source not in ("simulate", "csv"):
            raise ConfigError(f"unknown data source {self.data.source!r}")
        if self.data.source == "csv" and not self.data.path:
            raise ConfigError("csv source needs data.path")
        if self.windows.scheme not in ("expanding", "721"):
            raise ConfigError(f"unknown window scheme {self.windows.scheme!r}")
        if not self.models:
            raise ConfigError("no models configured")
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}")
        for m, g in self.grids.items():
            if m not in self.models:
                raise ConfigError(f"grid given for unconfigured model {m!r}")
            allowed = default_grid(m)
            for k, v in g.items():
                if k not in allowed:
                    raise ConfigError(f"unknown hyperparameter {k!r} for {m}")
                if isinstance(v, (tuple, list)) and len(v) == 0:
                    raise ConfigError(f"empty grid for {m}.{k}")
        for e in self.ensembles:
            if e.split(":")[0] not in ("avg", "op", "wp", "dmspe"):
                raise ConfigError(f"unknown ensemble {e!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.target_scale <= 0:
            raise ConfigError("target_scale must be positive")
        return self

    def to_dict(self):
        d = asdict(self)
        d["grids"] = {m: {k: list(v) if isinstance(v, tuple) else v for k, v in g.items()}
                      for m, g in self.grids.items()}
        return d


def _value(s: str):
    s = s.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    try:
        return ast.literal_eval(s)
    except (ValueError, SyntaxError):
        return s


def _list(s: str):
    if s.strip().startswith(("(", "[")):
        v = ast.literal_eval(s.strip())
        return tuple(v)
    return tuple(_value(x) for x in s.split(",") if x.strip())


def _fill(obj, section, name):
    for key, raw in section.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown key {name}.{key}")
        cur = getattr(obj, key)
        if isinstance(cur, tuple):
            val = _list(raw)
        else:
            val = _value(raw)
            if isinstance(cur, bool):
                if not isinstance(val, bool):
                    raise ConfigError(f"{name}.{key} must be true/false")
            elif isinstance(cur, int) and not isinstance(val, int):
                raise ConfigError(f"{name}.{key} must be an integer")
            elif isinstance(cur, float) and isinstance(val, int):
                val = float(val)
            elif isinstance(cur, str) and not isinstance(val, str):
                val = str(raw).strip()
        setattr(obj, key, val)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig()
    for sec in cp.sections():
        body = dict(cp[sec])
        if sec == "data":
            _fill(cfg.data, body, sec)
        elif sec == "windows":
            _fill(cfg.windows, body, sec)
        elif sec == "evaluate":
            _fill(cfg.evaluate, body, sec)
        elif sec == "extras":
            _fill(cfg.extras, body, sec)
        elif sec == "models":
            cfg.models = tuple(str(x) for x in _list(body.get("names", "")))
        elif sec == "ensembles":
            cfg.ensembles = tuple(x.strip() for x in body.get("methods", "").split(",") if x.strip())
        elif sec.startswith("grid."):
            cfg.grids[sec[5:]] = {k: _list(v) if k != "widths" else (_value(v),) for k, v in body.items()}
        elif sec == "run":
            for k, v in body.items():
                if k not in ("seed", "jobs", "out", "target_scale"):
                    raise ConfigError(f"unknown key run.{k}")
                val = _value(v)
                setattr(cfg, k, float(val) if k == "target_scale" else (str(val) if k == "out" else val))
        else:
            raise ConfigError(f"unknown section [{sec}]")
    return cfg.validate()


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text())
