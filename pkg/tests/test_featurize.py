from __future__ import annotations

import json
import random
from collections import Counter
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdeltkit import synth
from gdeltkit.binning import fit_values
from gdeltkit.featurize import (
    FeatureError,
    FeatureSpec,
    FeatureTable,
    NumericVar,
    derive_features,
    distinct_values,
    fit_bins,
)
from gdeltkit.gdelt_parser import parse_lines


def recs(*pairs, var="v"):
    return [{"day": d, var: x} for d, x in pairs]


def test_distinct_values():
    assert distinct_values(recs(("d", "B"), ("d", "A"), ("d", "A"), ("d", None)), "v") == ["A", "B"]
    assert distinct_values(recs(("d", None), ("d", "")), "v") == []
    rng = random.Random(1)
    data = recs(*(("d", rng.choice("PQR")) for _ in range(500)))
    assert distinct_values(data, "v") == sorted({r["v"] for r in data}) == ["P", "Q", "R"]


def test_cardinality_cap_names_variable_and_count():
    data = recs(*(("2013-06-01", str(i)) for i in range(12)))
    with pytest.raises(FeatureError, match=r"v: 12 distinct values.*max_cardinality=10"):
        distinct_values(data, "v", max_cardinality=10)
    with pytest.raises(FeatureError, match="12 distinct"):
        derive_features(data, FeatureSpec(("v",), time_variable="day", max_cardinality=10))


def test_fit_bins_on_records():
    bs = fit_bins(recs(*(("d", x) for x in range(11))), "v", "width", 2)
    assert bs.edges == (0.0, 5.0, 10.0) and bs.fitted_on == 11


def test_empty_input_keeps_declared_columns():
    spec = FeatureSpec(("a",), (NumericVar("x", "width", 3),), time_variable="day")
    table = derive_features([], spec)
    assert table.n_rows == 0
    assert table.columns == ["a__MISSING", "x__MISSING", "x__bin1", "x__bin2", "x__bin3"]
    assert table.to_csv() == "day,a__MISSING,x__MISSING,x__bin1,x__bin2,x__bin3\n"


def test_two_day_example():
    data = recs(("2013-06-01", "A"), ("2013-06-01", "A"), ("2013-06-02", "B"), ("2013-06-02", None))
    table = derive_features(data, FeatureSpec(("v",), time_variable="day"))
    assert table.columns == ["v__MISSING", "v__A", "v__B"]
    assert table.values.tolist() == [[0, 2, 0], [1, 0, 1]]
    assert table.to_csv() == "day,v__MISSING,v__A,v__B\n2013-06-01,0,2,0\n2013-06-02,1,0,1\n"
    assert table.labels["v__A"] == "v = A" and table.labels["v__MISSING"] == "v = NULL"


def test_four_values_give_five_columns():
    data = recs(*(("2013-06-01", x) for x in "WXYZ"))
    table = derive_features(data, FeatureSpec(("v",), time_variable="day"))
    assert len(table.block("v")) == 5


def test_unknown_field_and_bad_time():
    data = recs(("2013-06-01", "A"), ("garbage", "B"), (None, "C"))
    with pytest.raises(FeatureError, match="unknown field 'nope'"):
        derive_features(data, FeatureSpec(("nope",), time_variable="day"))
    table = derive_features(data, FeatureSpec(("v",), time_variable="day"))
    assert table.excluded_time == 2 and table.n_rows == 1 and table.columns == ["v__MISSING", "v__A"]


def test_spec_validation():
    with pytest.raises(FeatureError, match="distinct"):
        FeatureSpec(("a", "a"))
    with pytest.raises(FeatureError, match="aggregator"):
        FeatureSpec(("a",), aggregator="max")
    with pytest.raises(FeatureError):
        NumericVar("x", "width", 0)
    with pytest.raises(FeatureError):
        FeatureSpec(("a",), max_cardinality=0)
    spec = FeatureSpec(("a",), (NumericVar("x", "freq", 4),), "day", "month", "avg", 50)
    assert FeatureSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def numeric_data():
    return [
        {"day": "2013-06-01", "x": 0.0},
        {"day": "2013-06-01", "x": 2.0},
        {"day": "2013-06-01", "x": 9.0},
        {"day": "2013-06-02", "x": None},
        {"day": "2013-06-02", "x": 10.0},
        {"day": "2013-06-03", "x": 4.0},
    ]


def test_sum_and_avg_aggregators():
    spec_sum = FeatureSpec((), (NumericVar("x", "width", 2),), time_variable="day", aggregator="sum")
    t = derive_features(numeric_data(), spec_sum)
    assert t.columns == ["x__MISSING", "x__bin1", "x__bin2"]
    # bins [0,5) and [5,10]; the missing column stays a count
    assert t.values.tolist() == [[0, 2, 9], [1, 0, 10], [0, 4, 0]]
    spec_avg = FeatureSpec((), (NumericVar("x", "width", 2),), time_variable="day", aggregator="avg")
    t = derive_features(numeric_data(), spec_avg)
    assert t.values.tolist() == [[0, 1, 9], [1, 0, 10], [0, 4, 0]]
    assert t.mask.tolist() == [[False, True, True], [True, False, True], [False, True, False]]
    assert "presence_mask" in t.to_dict()


def test_month_resolution():
    data = recs(("2013-06-01", "A"), ("2013-06-30", "A"), ("2013-07-02", "B"))
    t = derive_features(data, FeatureSpec(("v",), time_variable="day", resolution="month"))
    assert t.unit_labels() == ["2013-06", "2013-07"]
    assert t.values.tolist() == [[0, 2, 0], [0, 0, 1]]


def test_prefitted_bins_clamp_new_data():
    train_bins = {"x": fit_values([0, 10], "width", 2, "x")}
    data = [{"day": "2013-06-01", "x": -50}, {"day": "2013-06-01", "x": 99}]
    t = derive_features(data, FeatureSpec((), (NumericVar("x", "width", 2),), time_variable="day"), train_bins)
    assert t.values.tolist() == [[0, 1, 1]]
    assert t.bins["x"] is train_bins["x"]


def test_all_missing_numeric_lands_in_missing_column():
    data = [{"day": "2013-06-01", "x": None}, {"day": "2013-06-01", "x": ""}]
    t = derive_features(data, FeatureSpec((), (NumericVar("x", "width", 3),), time_variable="day"))
    assert t.values.tolist() == [[2, 0, 0, 0]] and "x" not in t.bins


def test_event_records_with_gdelt_names():
    records = list(parse_lines(synth.event_lines(300, date(2013, 6, 1), 7, seed=2)))
    spec = FeatureSpec(
        ("QuadClass", "ActionGeo_FullName", "mainURL"),
        (NumericVar("GoldsteinScale", "freq", 4),),
        time_variable="SQLDATE",
    )
    t = derive_features(records, spec)
    per_day = Counter(r.sql_date for r in records)
    assert t.units == sorted(per_day)
    assert [c for c in t.block("QuadClass")] == ["QuadClass__MISSING", "QuadClass__1", "QuadClass__2",
                                                 "QuadClass__3", "QuadClass__4"]
    hosts = {r.source_host for r in records}
    assert len(t.block("mainURL")) == len(hosts) + 1
    for var in spec.variables:
        cols = [t.columns.index(c) for c in t.block(var)]
        assert t.values[:, cols].sum(axis=1).tolist() == [per_day[u] for u in t.units]
    assert t.to_csv() == derive_features(records, spec).to_csv()


def test_json_and_csv_round_trip(tmp_path):
    data = numeric_data()
    spec = FeatureSpec((), (NumericVar("x", "freq", 3),), time_variable="day")
    t = derive_features(data, spec)
    meta = json.loads(t.to_json(tmp_path / "f.json"))
    assert meta["spec"] == spec.to_dict()
    assert meta["bins"]["x"]["edges"] == list(t.bins["x"].edges)
    t.to_csv(tmp_path / "f.csv")
    back = FeatureTable.from_csv(tmp_path / "f.csv")
    assert back.units == t.units and back.columns == t.columns
    assert np.array_equal(back.values, t.values)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(1, 4), st.sampled_from(["a", "b", "c", None]),
                  st.none() | st.floats(-100, 100, allow_nan=False)),
        min_size=1,
        max_size=50,
    ),
    st.sampled_from(["width", "freq"]),
    st.integers(1, 5),
)
def test_count_and_sum_conservation(rows, method, l):
    data = [{"day": f"2013-06-0{d}", "n": n, "x": x} for d, n, x in rows]
    per_day = Counter(r["day"] for r in data)
    t = derive_features(data, FeatureSpec(("n",), (NumericVar("x", method, l),), time_variable="day"))
    for var in ("n", "x"):
        cols = [t.columns.index(c) for c in t.block(var)]
        assert t.values[:, cols].sum(axis=1).tolist() == [per_day[u.isoformat()] for u in t.units]
    s = derive_features(data, FeatureSpec(("n",), (NumericVar("x", method, l),), time_variable="day",
                                          aggregator="sum"))
    bin_cols = [s.columns.index(c) for c in s.block("x")[1:]]
    for i, u in enumerate(s.units):
        want = sum(r["x"] for r in data if r["day"] == u.isoformat() and r["x"] is not None)
        assert s.values[i, bin_cols].sum() == pytest.approx(want, rel=1e-9, abs=1e-9)
