"""Price panels, monthly standardization, expanding-window plans and state labels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when input data violates a panel precondition."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Dated daily prices with a named feature matrix.

    Row ``t`` carries the price ``p_t`` and the features known at ``t``; the
    forward log return ``r_{t+1} = ln(p_{t+1} / p_t)`` is the target paired
    with row ``t``, so there are ``len(panel) - 1`` targets.
    """

    dates: np.ndarray
    prices: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]
    month_id: np.ndarray
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.prices)
        object.__setattr__(self, "dates", _frozen(np.asarray(self.dates, dtype="datetime64[D]")))
        object.__setattr__(self, "prices", _frozen(np.asarray(self.prices, dtype=float)))
        feats = np.asarray(self.features, dtype=float).reshape(n, -1)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "month_id", _frozen(np.asarray(self.month_id, dtype=np.int64)))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if n < 2:
            raise DataError("panel needs at least 2 rows")
        if len(self.dates) != n or len(self.month_id) != n:
            raise DataError("dates, prices and month_id must have equal length")
        if feats.shape[1] != len(self.feature_names):
            raise DataError("feature matrix width does not match feature_names")
        if feats.shape[1] < 1:
            raise DataError("panel needs at least one feature column")
        if np.any(np.diff(self.dates.astype(np.int64)) <= 0):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.prices)) or np.any(self.prices <= 0):
            raise DataError("prices must be finite and positive")
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain non-finite values")

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def returns(self) -> np.ndarray:
        """Forward log returns; element ``t`` is ``ln(p_{t+1}/p_t)``."""
        return np.diff(np.log(self.prices))

    @property
    def n_targets(self) -> int:
        return len(self.prices) - 1

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]

    def months(self) -> np.ndarray:
        """Distinct month ids in chronological order."""
        _, first = np.unique(self.month_id, return_index=True)
        return self.month_id[np.sort(first)]

    def with_features(self, features: np.ndarray, names: Sequence[str] | None = None,
                      notes: Sequence[str] = ()) -> "PricePanel":
        return replace(self, features=features,
                       feature_names=tuple(names) if names is not None else self.feature_names,
                       notes=self.notes + tuple(notes))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        df.insert(0, "price", self.prices)
        df.insert(0, "date", pd.to_datetime(self.dates).strftime("%Y-%m-%d"))
        ret = np.append(self.returns, np.nan)
        df["return"] = ret
        return df


def calendar_month_ids(dates: np.ndarray) -> np.ndarray:
    months = np.asarray(dates, dtype="datetime64[M]").astype(np.int64)
    return months - months[0]


def block_month_ids(n: int, length: int = 30) -> np.ndarray:
    """Fixed-length pseudo months; a trailing fragment shorter than 2 rows joins the previous block."""
    ids = np.arange(n) // length
    if n > length and np.sum(ids == ids[-1]) < 2:
        ids[ids == ids[-1]] = ids[-1] - 1
    return ids


def load_csv(path: str | Path, date_col: str = "date", price_col: str = "price",
             feature_cols: Sequence[str] | None = None, month_ids: str = "calendar") -> PricePanel:
    """Read a ``date, price, features...`` CSV into a panel.

    A ``return`` column, if present, is ignored and recomputed from prices.
    Missing feature cells are linearly interpolated, then forward/back filled.
    ``month_ids`` is ``"calendar"`` or ``"block<N>"`` for fixed N-day blocks.
    """
    df = pd.read_csv(path, float_precision="round_trip")
    for col in (date_col, price_col):
        if col not in df.columns:
            raise DataError(f"missing required column {col!r}")
    if len(df) < 2:
        raise DataError(f"need at least 2 rows, found {len(df)}")
    dates = pd.to_datetime(df[date_col], format="ISO8601")
    if dates.duplicated().any():
        dup = dates[dates.duplicated()].iloc[0]
        raise DataError(f"duplicate date {dup.date()}")
    prices = pd.to_numeric(df[price_col], errors="coerce")
    bad = ~(prices > 0)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"non-positive or missing price at row {row + 2} (date {dates.iloc[row].date()})")
    if feature_cols is None:
        feature_cols = [c for c in df.columns if c not in (date_col, price_col, "return")]
    order = np.argsort(dates.to_numpy(), kind="stable")
    df = df.iloc[order].reset_index(drop=True)
    dates = dates.iloc[order].reset_index(drop=True)
    notes = []
    feats = df[list(feature_cols)].apply(pd.to_numeric, errors="coerce")
    n_missing = int(feats.isna().sum().sum())
    if n_missing:
        feats = feats.interpolate(method="linear", limit_direction="both").ffill().bfill()
        notes.append(f"imputed {n_missing} missing feature cells")
    if feats.isna().any().any():
        raise DataError("feature column entirely missing: "
                        + ", ".join(feats.columns[feats.isna().all()]))
    d = dates.to_numpy().astype("datetime64[D]")
    if month_ids == "calendar":
        mid = calendar_month_ids(d)
    elif month_ids.startswith("block"):
        mid = block_month_ids(len(d), int(month_ids[5:] or 30))
    else:
        raise DataError(f"unknown month_ids scheme {month_ids!r}")
    return PricePanel(d, df[price_col].to_numpy(float), feats.to_numpy(float), tuple(feature_cols),
                      mid, tuple(notes))


def write_csv(panel: PricePanel, path: str | Path) -> Path:
    """Write the panel with a trailing forward ``return`` column (empty on the last row)."""
    path = Path(path)
    panel.to_frame().to_csv(path, index=False, float_format=None)
    return path


def monthly_standardize(panel: PricePanel, columns: Sequence[str] | None = None) -> PricePanel:
    """Z-score each feature within each month (sample sd, n-1 denominator).

    A column that is constant within a month becomes zeros for that month and
    a note is appended to the panel.
    """
    idx = range(len(panel.feature_names)) if columns is None else [
        panel.feature_names.index(c) for c in columns]
    out, notes = standardize_blocks(panel.features, panel.month_id, list(idx), panel.feature_names)
    return panel.with_features(out, notes=notes)


def standardize_blocks(X: np.ndarray, month_id: np.ndarray, cols=None, names=None):
    X = np.array(X, dtype=float, copy=True)
    cols = range(X.shape[1]) if cols is None else cols
    notes = []
    for m in np.unique(month_id):
        rows = month_id == m
        if rows.sum() < 2:
            raise DataError(f"month {m} has fewer than 2 rows")
        for j in cols:
            v = X[rows, j]
            sd = v.std(ddof=1)
            mu = v.mean()
            # relative floor: sd at rounding-noise level of the mean counts as constant
            if sd <= 1e-12 * max(1.0, abs(mu)):
                X[rows, j] = 0.0
                label = names[j] if names is not None else j
                notes.append(f"zero variance in column {label} for month {m}; set to 0")
                log.warning(notes[-1])
            else:
                X[rows, j] = (v - mu) / sd
    return X, notes


@dataclass(frozen=True)
class Window:
    train: range
    val: range
    test: range


@dataclass(frozen=True)
class WindowPlan:
    """Ordered (train, validation, test) row ranges over the target rows."""

    windows: tuple[Window, ...]
    val_len_months: int
    test_len_months: int = 1

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def __getitem__(self, k) -> Window:
        return self.windows[k]


def _month_bounds(panel: PricePanel) -> list[tuple[int, int]]:
    """Row ranges of each month restricted to rows that have a forward return."""
    n = panel.n_targets
    mid = panel.month_id[:n]
    change = np.flatnonzero(np.diff(mid)) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change, [n]])
    return list(zip(starts.tolist(), stops.tolist()))


def build_window_plan(panel: PricePanel, train0_months: int, val_months: int) -> WindowPlan:
    """Expanding training set, rolling fixed-length validation, one test month per window."""
    bounds = _month_bounds(panel)
    need = train0_months + val_months + 1
    if train0_months < 1 or val_months < 1:
        raise DataError("train0_months and val_months must be positive")
    if len(bounds) < need:
        raise DataError(f"insufficient history: need {need} months, have {len(bounds)}")
    wins = []
    for k in range(len(bounds) - train0_months - val_months):
        tr_end = train0_months + k
        va_end = tr_end + val_months
        wins.append(Window(range(0, bounds[tr_end - 1][1]),
                           range(bounds[tr_end][0], bounds[va_end - 1][1]),
                           range(*bounds[va_end])))
    return WindowPlan(tuple(wins), val_months, 1)


def split_plan(n_rows: int, ratios: Sequence[int] = (7, 2, 1)) -> WindowPlan:
    """Single chronological train/validation/test split in the given proportions."""
    if n_rows < 3:
        raise DataError("need at least 3 rows to split")
    total = sum(ratios)
    a = n_rows * ratios[0] // total
    b = a + n_rows * ratios[1] // total
    if not 0 < a < b < n_rows:
        raise DataError(f"ratios {tuple(ratios)} leave an empty subsample for n={n_rows}")
    return WindowPlan((Window(range(0, a), range(a, b), range(b, n_rows)),), val_len_months=0,
                      test_len_months=0)


def window_plan_from_panel(panel: PricePanel, scheme: str = "721", train0_months: int = 0,
                           val_months: int = 0) -> WindowPlan:
    if scheme == "721":
        return split_plan(panel.n_targets)
    if scheme == "expanding":
        return build_window_plan(panel, train0_months, val_months)
    raise DataError(f"unknown window scheme {scheme!r}")


TERCILE_NAMES = ("low", "normal", "high")


@dataclass(frozen=True, eq=False)
class StateLabels:
    labels: np.ndarray
    source_variable: str
    cutpoints: tuple[float, ...] = ()

    def mask(self, state: str) -> np.ndarray:
        return self.labels == state

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.labels.tolist()))


def classify_states(variable, scheme: str | Sequence[float] = "tercile", name: str = "variable",
                    state_names: Sequence[str] | None = None) -> StateLabels:
    """Split a series into regimes.

    ``scheme="tercile"`` ranks the full sample (ties resolved earlier-first) and
    assigns bottom/middle/top thirds to low/normal/high.  A sequence of
    cutpoints instead labels by ``np.digitize``.
    """
    v = np.asarray(variable, dtype=float)
    if v.size == 0:
        raise DataError("empty splitting variable")
    if np.all(v == v[0]):
        raise DataError("degenerate splitting variable")
    if isinstance(scheme, str):
        if scheme != "tercile":
            raise DataError(f"unknown scheme {scheme!r}")
        rank = np.empty(v.size, dtype=np.int64)
        rank[np.argsort(v, kind="stable")] = np.arange(v.size)
        bucket = (3 * rank) // v.size
        names = np.array(state_names or TERCILE_NAMES, dtype=object)
        return StateLabels(names[bucket], name)
    cuts = tuple(float(c) for c in scheme)
    if list(cuts) != sorted(cuts):
        raise DataError("cutpoints must be increasing")
    names = state_names or [f"s{i}" for i in range(len(cuts) + 1)]
    if len(names) != len(cuts) + 1:
        raise DataError("need one state name per interval")
    bucket = np.digitize(v, cuts)
    return StateLabels(np.array(names, dtype=object)[bucket], name, cuts)
