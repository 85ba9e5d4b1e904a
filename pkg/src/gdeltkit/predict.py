"""Lagged supervised tables and a CART regression tree for next-day index levels."""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from ._io import atomic_open, dump_json, fmt_num, sha256_text, write_csv
from .featurize import FeatureTable
from .ingest import MarketBar

logger = logging.getLogger(__name__)

NEXT_TRADING_DAY = "next_trading_day"
NEXT_CALENDAR_DAY = "next_calendar_day"
LAG_POLICIES = (NEXT_TRADING_DAY, NEXT_CALENDAR_DAY)
_LAG_ALIASES = {"trading": NEXT_TRADING_DAY, "calendar": NEXT_CALENDAR_DAY}


class PredictError(ValueError):
    pass


def canonical_lag(policy: str) -> str:
    policy = _LAG_ALIASES.get(policy, policy)
    if policy not in LAG_POLICIES:
        raise PredictError(f"unknown lag policy {policy!r}; expected one of {LAG_POLICIES}")
    return policy


# --- training table ----------------------------------------------------------


@dataclass
class TrainingTable:
    feature_dates: list[date]
    target_dates: list[date]
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    current_close: np.ndarray
    target_kind: str = "adj_close"
    lag_policy: str = NEXT_TRADING_DAY
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.feature_dates)

    def window(self, start: Optional[date] = None, end: Optional[date] = None) -> "TrainingTable":
        """Rows whose feature date lies in [start, end] (either end open when None)."""
        keep = [
            i
            for i, d in enumerate(self.feature_dates)
            if (start is None or d >= start) and (end is None or d <= end)
        ]
        return TrainingTable(
            [self.feature_dates[i] for i in keep],
            [self.target_dates[i] for i in keep],
            self.X[keep],
            self.y[keep],
            list(self.feature_names),
            self.current_close[keep],
            self.target_kind,
            self.lag_policy,
            0,
        )

    _fixed = ("feature_date", "target_date", "target", "current_close")

    def to_csv(self, path: str | Path) -> int:
        header = [*self._fixed, *self.feature_names]
        rows = (
            [fd.isoformat(), td.isoformat(), float(y), float(c), *(float(v) for v in x)]
            for fd, td, y, c, x in zip(
                self.feature_dates, self.target_dates, self.y, self.current_close, self.X
            )
        )
        return write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path: str | Path, target_kind: str = "adj_close") -> "TrainingTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0][:4]) != cls._fixed:
            raise PredictError(f"{path}: not a training table (header {rows[0][:4] if rows else []})")
        body = rows[1:]
        names = rows[0][4:]

        def num(s: str) -> float:
            return float(s) if s != "" else math.nan

        X = np.array([[num(v) for v in r[4:]] for r in body], dtype=float).reshape(len(body), len(names))
        return cls(
            [date.fromisoformat(r[0]) for r in body],
            [date.fromisoformat(r[1]) for r in body],
            X,
            np.array([num(r[2]) for r in body], dtype=float),
            names,
            np.array([num(r[3]) for r in body], dtype=float),
            target_kind,
        )


def resolve_target(
    feature_date: date, bar_dates: Sequence[date], policy: str
) -> Optional[int]:
    """Index into ``bar_dates`` (sorted) of the target bar for ``feature_date``."""
    if policy == NEXT_CALENDAR_DAY:
        nxt = feature_date + timedelta(days=1)
        i = bisect.bisect_left(bar_dates, nxt)
        return i if i < len(bar_dates) and bar_dates[i] == nxt else None
    i = bisect.bisect_right(bar_dates, feature_date)
    return i if i < len(bar_dates) else None


def build_training_table(
    features: FeatureTable,
    market: Sequence[MarketBar],
    lag_policy: str = NEXT_TRADING_DAY,
    target_diff: bool = False,
    trading_days_only: bool = False,
) -> TrainingTable:
    """Pair each feature row (day t) with the index level of a later day.

    ``next_trading_day`` takes the first bar after t; ``next_calendar_day``
    requires a bar on t+1 and drops the row otherwise.  ``target_diff`` swaps
    the level for the simple return from the latest close on or before t.
    ``trading_days_only`` keeps only feature rows dated on a trading day.
    """
    policy = canonical_lag(lag_policy)
    if features.n_rows == 0 or not market:
        raise PredictError("features and market series must both be non-empty")
    if features.spec.resolution != "day":
        raise PredictError("a 1-day lag needs day-resolution features")
    bars = sorted(market, key=lambda b: b.date)
    bar_dates = [b.date for b in bars]
    trading = set(bar_dates)

    keep, targets, fdates, tdates, current = [], [], [], [], []
    dropped = 0
    for i, t in enumerate(features.units):
        if trading_days_only and t not in trading:
            dropped += 1
            continue
        j = resolve_target(t, bar_dates, policy)
        k = bisect.bisect_right(bar_dates, t) - 1
        cur = bars[k].adj_close if k >= 0 else math.nan
        if j is None or (target_diff and math.isnan(cur)):
            dropped += 1
            continue
        target = bars[j].adj_close
        if target_diff:
            target = target / cur - 1.0
        keep.append(i)
        targets.append(target)
        fdates.append(t)
        tdates.append(bar_dates[j])
        current.append(cur)
    if not keep:
        raise PredictError("zero resolvable rows: no feature date has a target in the market series")
    if dropped:
        logger.info("%d feature row(s) without a resolvable target dropped", dropped)
    return TrainingTable(
        fdates,
        tdates,
        features.values[keep].astype(float),
        np.array(targets, dtype=float),
        list(features.columns),
        np.array(current, dtype=float),
        "return" if target_diff else "adj_close",
        policy,
        dropped,
    )


# --- regression tree ---------------------------------------------------------


@dataclass
class Node:
    n_rows: int
    mean: float
    sse: float
    depth: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    gain: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def walk(self):
        yield self
        if not self.is_leaf:
            yield from self.left.walk()
            yield from self.right.walk()

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "n_rows": self.n_rows,
            "mean": self.mean,
            "sse": self.sse,
            "depth": self.depth,
        }
        if not self.is_leaf:
            d.update(
                feature=self.feature,
                threshold=self.threshold,
                gain=self.gain,
                left=self.left.to_dict(),
                right=self.right.to_dict(),
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        node = cls(d["n_rows"], d["mean"], d["sse"], d["depth"])
        if "feature" in d:
            node.feature = d["feature"]
            node.threshold = d["threshold"]
            node.gain = d["gain"]
            node.left = cls.from_dict(d["left"])
            node.right = cls.from_dict(d["right"])
        return node


@dataclass
class TreeModel:
    root: Node
    feature_names: list[str]
    max_depth: int = 6
    min_leaf_rows: int = 5
    min_gain: float = 0.0
    importance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_train: int = 0
    window: Optional[tuple[Optional[str], Optional[str]]] = None

    @property
    def schema_hash(self) -> str:
        return sha256_text("\n".join(self.feature_names))

    def nodes(self) -> list[Node]:
        return list(self.root.walk())

    def leaves(self) -> list[Node]:
        return [n for n in self.root.walk() if n.is_leaf]

    def top_features(self, k: int = 3) -> list[tuple[str, float]]:
        """The ``k`` most important features with positive importance."""
        order = sorted(
            (i for i in range(len(self.importance)) if self.importance[i] > 0),
            key=lambda i: (-self.importance[i], i),
        )
        return [(self.feature_names[i], float(self.importance[i])) for i in order[:k]]

    def to_dict(self) -> dict:
        return {
            "schema_hash": self.schema_hash,
            "feature_names": self.feature_names,
            "hyperparams": {
                "max_depth": self.max_depth,
                "min_leaf_rows": self.min_leaf_rows,
                "min_gain": self.min_gain,
            },
            "n_train": self.n_train,
            "window": list(self.window) if self.window else None,
            "importance": {
                self.feature_names[i]: float(v) for i, v in enumerate(self.importance) if v > 0
            },
            "top_features": [[n, v] for n, v in self.top_features(3)],
            "tree": self.root.to_dict(),
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = dump_json(self.to_dict())
        if path is not None:
            with atomic_open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path: str | Path) -> "TreeModel":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        names = d["feature_names"]
        if sha256_text("\n".join(names)) != d["schema_hash"]:
            raise PredictError(f"{path}: schema hash does not match feature names")
        imp = np.zeros(len(names))
        for name, v in d["importance"].items():
            imp[names.index(name)] = v
        hp = d["hyperparams"]
        window = tuple(d["window"]) if d.get("window") else None
        return cls(
            Node.from_dict(d["tree"]), names, hp["max_depth"], hp["min_leaf_rows"],
            hp["min_gain"], imp, d["n_train"], window,
        )


def _sse(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.sum((y - y.mean()) ** 2))


def best_split(
    X: np.ndarray, y: np.ndarray, min_leaf_rows: int
) -> Optional[tuple[int, float, float]]:
    """Best (feature, threshold, gain) over all midpoints between consecutive
    distinct values, or None when no split leaves ``min_leaf_rows`` per side.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, p = X.shape
    yc = y - y.mean()
    parent = float(np.dot(yc, yc))
    best: Optional[tuple[float, int, float]] = None
    lo, hi = min_leaf_rows, n - min_leaf_rows
    if lo > hi or n < 2:
        return None
    for f in range(p):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = yc[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csq[-1]
        # split after position i-1: left = first i rows
        i = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (i >= max(lo, 1)) & (i <= hi)
        if not valid.any():
            continue
        idx = i[valid]
        ls, lq = csum[idx - 1], csq[idx - 1]
        rs, rq = total - ls, total_sq - lq
        child = (lq - ls * ls / idx) + (rq - rs * rs / (n - idx))
        gain = parent - child
        g = int(np.argmax(gain))
        cand_gain = float(gain[g])
        # the first maximum is already the lowest threshold for this feature
        threshold = float((xs[idx[g] - 1] + xs[idx[g]]) / 2.0)
        if best is None or cand_gain > best[0]:
            best = (cand_gain, f, threshold)
    if best is None:
        return None
    return best[1], best[2], best[0]


def _grow(X, y, depth, model: TreeModel, importance: np.ndarray) -> Node:
    node = Node(len(y), float(y.mean()), _sse(y), depth)
    if depth >= model.max_depth or len(y) < 2 * model.min_leaf_rows or node.sse <= 0.0:
        return node
    found = best_split(X, y, model.min_leaf_rows)
    if found is None:
        return node
    f, thr, _ = found
    go_left = X[:, f] <= thr
    yl, yr = y[go_left], y[~go_left]
    gain = node.sse - (_sse(yl) + _sse(yr))
    if not gain > model.min_gain or not gain > 0.0:
        return node
    node.feature, node.threshold, node.gain = f, thr, gain
    importance[f] += gain
    node.left = _grow(X[go_left], yl, depth + 1, model, importance)
    node.right = _grow(X[~go_left], yr, depth + 1, model, importance)
    return node


def train_tree(
    table: TrainingTable,
    max_depth: int = 6,
    min_leaf_rows: int = 5,
    min_gain: float = 0.0,
    window: Optional[tuple[Optional[date], Optional[date]]] = None,
) -> TreeModel:
    """Grow a variance-reduction regression tree on ``table`` (optionally a date window).

    Rows with ``x <= threshold`` go left.  A node is split only if the best
    split lowers the summed squared error by more than ``min_gain``.
    """
    if window is not None:
        table = table.window(*window)
    if max_depth < 0 or min_leaf_rows < 1 or min_gain < 0:
        raise PredictError("need max_depth >= 0, min_leaf_rows >= 1 and min_gain >= 0")
    if len(table) < 2 * min_leaf_rows:
        raise PredictError(
            f"too few rows to train: {len(table)} < 2 * min_leaf_rows ({2 * min_leaf_rows})"
        )
    X = np.asarray(table.X, dtype=float)
    y = np.asarray(table.y, dtype=float)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise PredictError("training data contains non-finite values")
    win = None
    if window is not None:
        win = tuple(d.isoformat() if d else None for d in window)
    model = TreeModel(
        Node(0, 0.0, 0.0, 0), list(table.feature_names), max_depth, min_leaf_rows, min_gain,
        np.zeros(X.shape[1]), len(y), win,
    )
    model.root = _grow(X, y, 0, model, model.importance)
    return model


def predict(model: TreeModel, vector: Sequence[float]) -> float:
    """Leaf mean reached by ``vector`` (``x <= threshold`` goes left)."""
    x = np.asarray(vector, dtype=float)
    if x.shape != (len(model.feature_names),):
        raise PredictError(
            f"feature vector has shape {x.shape}, model expects ({len(model.feature_names)},)"
        )
    if not np.isfinite(x).all():
        raise PredictError("feature vector contains non-finite values")
    node = model.root
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.mean


def predict_many(model: TreeModel, X: np.ndarray) -> np.ndarray:
    return np.array([predict(model, row) for row in np.asarray(X, dtype=float)])


# --- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    n_rows: int
    rmse: float
    mae: float
    baseline_rows: int
    baseline_rmse: float
    baseline_mae: float

    def to_csv(self, path: str | Path) -> int:
        fields = ["n_rows", "rmse", "mae", "baseline_rows", "baseline_rmse", "baseline_mae"]
        return write_csv(path, fields, [[getattr(self, f) for f in fields]])


def _rmse_mae(err: np.ndarray) -> tuple[float, float]:
    if len(err) == 0:
        return math.nan, math.nan
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err)))


def evaluate(
    model: TreeModel,
    table: TrainingTable,
    window: Optional[tuple[Optional[date], Optional[date]]] = None,
) -> Metrics:
    """RMSE/MAE of the model and of the persistence baseline on ``table``.

    Persistence predicts the latest close on or before the feature date (for
    return targets it predicts no change).
    """
    if window is not None:
        table = table.window(*window)
    if len(table) == 0:
        raise PredictError("evaluation window contains no rows")
    pred = predict_many(model, table.X)
    rmse, mae = _rmse_mae(pred - table.y)
    if table.target_kind == "return":
        base = np.zeros_like(table.y)
        ok = np.ones(len(table), dtype=bool)
    else:
        base = table.current_close
        ok = np.isfinite(base)
    b_rmse, b_mae = _rmse_mae(base[ok] - table.y[ok])
    return Metrics(len(table), rmse, mae, int(ok.sum()), b_rmse, b_mae)


def fmt_metrics(m: Metrics) -> str:
    return ", ".join(f"{k}={fmt_num(getattr(m, k))}" for k in m.__dataclass_fields__)
