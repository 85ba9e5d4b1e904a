from __future__ import annotations

import math
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdeltkit.featurize import FeatureSpec, FeatureTable
from gdeltkit.ingest import MarketBar
from gdeltkit.predict import (
    PredictError,
    TrainingTable,
    TreeModel,
    build_training_table,
    evaluate,
    predict,
    predict_many,
    train_tree,
)

FRIDAY = date(2013, 6, 14)


def bar(d, close):
    return MarketBar(d, close, close, close, close, close, 100)


def features(days, rows, names=("f__a", "f__b")):
    return FeatureTable(list(days), list(names), np.array(rows, dtype=float), FeatureSpec(("f",), time_variable="day"))


def table(X, y, start=date(2013, 1, 1)):
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    days = [start + timedelta(days=i) for i in range(len(y))]
    return TrainingTable(days, [d + timedelta(days=1) for d in days], X, np.asarray(y, dtype=float),
                         [f"x{i}" for i in range(X.shape[1])], np.asarray(y, dtype=float))


def test_friday_maps_to_monday_bar():
    week = [FRIDAY - timedelta(days=4) + timedelta(days=i) for i in range(5)]  # Mon..Fri
    monday = FRIDAY + timedelta(days=3)
    market = [bar(d, 100 + i) for i, d in enumerate(week)] + [bar(monday, 200.0)]
    ft = features([FRIDAY], [[1, 0]])
    t = build_training_table(ft, market, "next_trading_day")
    assert t.target_dates == [monday] and t.y.tolist() == [200.0] and t.current_close.tolist() == [104.0]
    with pytest.raises(PredictError, match="zero resolvable rows"):
        build_training_table(ft, market, "next_calendar_day")
    both = build_training_table(features([FRIDAY - timedelta(days=1), FRIDAY], [[1, 0], [0, 1]]), market, "calendar")
    assert both.feature_dates == [FRIDAY - timedelta(days=1)] and both.dropped == 1


def test_disjoint_ranges_and_bad_policy():
    ft = features([date(2020, 1, 1)], [[1, 0]])
    with pytest.raises(PredictError, match="zero resolvable rows"):
        build_training_table(ft, [bar(date(2013, 1, 1), 1.0)])
    with pytest.raises(PredictError, match="unknown lag policy"):
        build_training_table(ft, [bar(date(2013, 1, 1), 1.0)], "weekly")


def test_target_diff_is_simple_return():
    d0 = date(2013, 6, 3)
    t = build_training_table(features([d0], [[1, 0]]), [bar(d0, 100.0), bar(d0 + timedelta(days=1), 110.0)],
                             target_diff=True)
    assert t.target_kind == "return" and t.y[0] == pytest.approx(0.1)


def test_constant_target_is_one_leaf():
    rng = np.random.default_rng(0)
    m = train_tree(table(rng.random((30, 3)), [7.0] * 30))
    assert m.root.is_leaf and m.root.mean == 7.0 and m.top_features() == []
    assert predict(m, [0.1, 0.2, 0.3]) == 7.0


def exhaustive_best(X, y, min_leaf):
    best = None
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f]))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left, right = y[X[:, f] <= thr], y[X[:, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
            if best is None or sse < best[0] - 1e-12:
                best = (sse, f, thr)
    return best


def step_table(seed=1):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 11, size=(60, 4)).astype(float)
    y = (X[:, 2] > 5).astype(float)
    return table(X, y), X, y


def test_step_function_root_split_matches_oracle():
    t, X, y = step_table()
    m = train_tree(t)
    _, f, thr = exhaustive_best(X, y, 5)
    assert (m.root.feature, m.root.threshold) == (f, thr) == (2, 5.5)
    assert 5 < m.root.threshold < 6
    assert m.top_features(3)[0][0] == "x2"
    vec = [0, 0, 1, 0]
    assert predict(m, vec) == 0.0  # routed left at the root
    assert predict(m, [0, 0, 9, 0]) == 1.0


def check_tree(m, X, y):
    reach = [0] * len(y)
    total = 0.0
    for node in m.nodes():
        if node.is_leaf:
            continue
        assert node.left.sse + node.right.sse < node.sse - m.min_gain
        total += node.gain
    for i, row in enumerate(X):
        node = m.root
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        reach[i] = id(node)
    assert sum(l.n_rows for l in m.leaves()) == len(y)
    for leaf in m.leaves():
        members = [i for i in range(len(y)) if reach[i] == id(leaf)]
        assert len(members) == leaf.n_rows
        assert leaf.mean == pytest.approx(float(np.mean(y[members])))
    assert m.importance.sum() == pytest.approx(total)
    assert (m.importance >= 0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4))
def test_random_tree_invariants(seed, depth, min_leaf):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, size=(40, 3)).astype(float)
    y = X[:, 0] * 2 + rng.normal(size=40)
    m = train_tree(table(X, y), max_depth=depth, min_leaf_rows=min_leaf)
    check_tree(m, X, y)
    pred = predict_many(m, X)
    assert ((pred - y) ** 2).sum() <= ((y - y.mean()) ** 2).sum() + 1e-9
    assert max(n.depth for n in m.nodes()) <= depth


def test_predict_schema_mismatch():
    t, _, _ = step_table()
    m = train_tree(t)
    with pytest.raises(PredictError, match="shape"):
        predict(m, [1, 2])


def test_model_json_round_trip_and_determinism(tmp_path):
    t, X, _ = step_table(3)
    a = train_tree(t, max_depth=3)
    b = train_tree(t, max_depth=3)
    assert a.to_json() == b.to_json()
    a.to_json(tmp_path / "m.json")
    back = TreeModel.from_json(tmp_path / "m.json")
    assert back.to_json() == a.to_json()
    assert predict_many(back, X).tolist() == predict_many(a, X).tolist()


def test_too_few_rows_and_window():
    t, _, _ = step_table()
    with pytest.raises(PredictError, match="too few rows"):
        train_tree(t, window=(date(2013, 1, 1), date(2013, 1, 5)))
    m = train_tree(t, window=(date(2013, 1, 1), date(2013, 1, 20)))
    assert m.n_train == 20 and m.window == ("2013-01-01", "2013-01-20")


def test_evaluate_metrics():
    t, X, y = step_table()
    perfect = train_tree(t)
    assert evaluate(perfect, t).rmse == 0.0
    targets = np.array([1.0, 3.0, 5.0, 7.0, 9.0, 11.0])
    flat = table(np.zeros((6, 1)), targets)
    m = train_tree(flat, min_leaf_rows=1)
    assert m.root.is_leaf
    metrics = evaluate(m, flat)
    assert metrics.rmse == pytest.approx(float(np.std(targets)))
    assert metrics.n_rows == 6
    steps = np.arange(10.0, 20.0)
    mono = table(np.zeros((10, 1)), steps)
    mono.current_close = steps - 1.0
    assert evaluate(m, mono).baseline_mae == pytest.approx(1.0)
    with pytest.raises(PredictError, match="no rows"):
        evaluate(m, mono, window=(date(2030, 1, 1), None))


def test_training_csv_round_trip(tmp_path):
    t, _, _ = step_table()
    t.to_csv(tmp_path / "t.csv")
    back = TrainingTable.from_csv(tmp_path / "t.csv")
    assert back.feature_dates == t.feature_dates and np.array_equal(back.X, t.X)
    assert np.array_equal(back.y, t.y) and back.feature_names == t.feature_names
    assert not math.isnan(back.current_close[0])
