"""Latent three-factor Monte Carlo designs (linear Model 1 and nonlinear Model 2)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DataError, PricePanel, block_month_ids, standardize_blocks

THETA1 = (-0.0013, -0.0032, 0.0059, 0.0037, 0.0053)
THETA2 = (-0.0026, 0.0082, 0.0074, 0.0010, 0.0052)
SEASON = (-0.21883, 0.88886, 0.20005)


@dataclass(frozen=True)
class DgpConfig:
    """Simulation settings.

    ``sigma_eps`` is quoted in percent (3.5702 means 0.035702 in log units);
    see ``eps_scale``.  Returns are generated in log units.
    """

    model: int = 1
    T: int = 3600
    P_C: int = 50
    P_x: int = 2
    seed: int = 0
    sigma_v: float = 0.00037873
    sigma_eps: float = 3.5702
    eps_scale: float = 0.01
    eps_dof: float | str = "normal"
    rho_x: float = 0.95
    season: tuple = SEASON
    p1: float = 143.9712
    theta1: tuple = THETA1
    theta2: tuple = THETA2
    month_len: int = 30

    def validate(self):
        if self.model not in (1, 2):
            raise DataError("model must be 1 or 2")
        if self.T < 60:
            raise DataError("T must be at least 60")
        if self.P_C < 3:
            raise DataError("P_C must be at least 3")
        if self.P_x < 1:
            raise DataError("P_x must be at least 1")
        if not abs(self.rho_x) < 1:
            raise DataError("|rho_x| must be below 1")
        if self.sigma_v < 0 or self.sigma_eps < 0:
            raise DataError("noise scales must be non-negative")
        if self.eps_dof != "normal" and not float(self.eps_dof) > 2:
            raise DataError("eps_dof must be 'normal' or > 2")
        if len(self.theta1) != 5 or len(self.theta2) != 5:
            raise DataError("theta vectors need 5 entries")
        return self


@dataclass
class SimTruth:
    signal: np.ndarray
    active: tuple[str, ...]
    covariates: np.ndarray
    theta: np.ndarray
    signal_r2: float
    rho_c: np.ndarray
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"active": list(self.active), "theta": self.theta.tolist(),
                "signal_r2": self.signal_r2, "rho_c": self.rho_c.tolist(),
                "signal": self.signal.tolist(), "config": self.config}


def gen_seasonality(T: int, alpha: float = SEASON[0], beta: float = SEASON[1],
                    phi: float = SEASON[2]) -> np.ndarray:
    t = np.arange(1, T + 1)
    return alpha + beta * np.abs(np.sin(np.pi * t / 7 - phi))


def _ar1(rng, n, rho, shape=()):
    rho = np.asarray(rho, dtype=float)
    sd = np.sqrt(1 - rho ** 2)
    out = np.empty((n,) + shape)
    out[0] = rng.standard_normal(shape)
    innov = rng.standard_normal((n,) + shape) * sd
    for i in range(1, n):
        out[i] = rho * out[i - 1] + innov[i]
    return out


def feature_names(P_C: int, P_x: int = 2) -> list[str]:
    xs = [f"x{k + 1}" for k in range(P_x)]
    cs = [f"C{j + 1}" for j in range(P_C)]
    return ["p", "s"] + xs + cs + [f"x1*C{j + 1}" for j in range(P_C)]


def true_covariates(model: int) -> tuple[str, ...]:
    if model == 1:
        return ("p", "s", "C1", "C2", "x1*C3")
    return ("p", "s", "C1^2", "C1*C2", "sgn(x1*C3)")


def simulate_dgp(cfg: DgpConfig) -> tuple[PricePanel, SimTruth]:
    """Draw one panel.  Row ``t`` holds ``p_t`` and ``Z_t``; its target is ``r_{t+1}``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    T = cfg.T
    s = gen_seasonality(T, *cfg.season)
    xs = _ar1(rng, T, np.full(cfg.P_x, cfg.rho_x), (cfg.P_x,))
    x = xs[:, 0]
    rho_c = rng.uniform(0.9, 1.0, cfg.P_C)
    month = block_month_ids(T, cfg.month_len)
    C, _ = standardize_blocks(_ar1(rng, T, rho_c, (cfg.P_C,)), month)
    v = rng.standard_normal((T, 3)) * cfg.sigma_v
    sig = cfg.sigma_eps * cfg.eps_scale
    if cfg.eps_dof == "normal":
        eps = rng.standard_normal(T) * sig
    else:
        nu = float(cfg.eps_dof)
        eps = rng.standard_t(nu, T) * sig * np.sqrt((nu - 2) / nu)
    noise = np.einsum("ij,ij->i", C[:, :3] * x[:, None], v) + eps

    theta = np.asarray(cfg.theta1 if cfg.model == 1 else cfg.theta2, dtype=float)
    if cfg.model == 1:
        fixed = np.column_stack([s, C[:, 0], C[:, 1], C[:, 2] * x])
    else:
        fixed = np.column_stack([s, C[:, 0] ** 2, C[:, 0] * C[:, 1], np.sign(C[:, 2] * x)])
    base = fixed @ theta[1:]
    # price enters f, so the recursion is sequential
    logp = np.empty(T)
    f = np.empty(T - 1)
    logp[0] = np.log(cfg.p1)
    for t in range(T - 1):
        f[t] = theta[0] * np.exp(logp[t]) + base[t]
        logp[t + 1] = logp[t] + f[t] + noise[t]
        if not abs(logp[t + 1]) <= 50:
            raise DataError(f"price explosion at t={t + 1} (|ln p| > 50); use a smaller theta scale")
    p = np.exp(logp)
    r = np.diff(logp)
    cov = np.column_stack([p, fixed])
    X = np.column_stack([p, s, xs, C, C * x[:, None]])
    dates = np.datetime64("2000-01-01") + np.arange(T)
    panel = PricePanel(dates, p, X, tuple(feature_names(cfg.P_C, cfg.P_x)), month)
    r2 = 1 - np.var(r - f) / np.var(r) if np.var(r) > 0 else 0.0
    truth = SimTruth(f, true_covariates(cfg.model), cov, theta, float(r2), rho_c,
                     {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()})
    return panel, truth


def write_truth(truth: SimTruth, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(truth.to_json(), indent=1))
    return path
