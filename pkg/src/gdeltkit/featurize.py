"""Roll event records up to one feature row per temporal unit.

Every source variable expands into a block of derived columns: a
``{var}__MISSING`` column first, then one ``{var}__{value}`` column per
distinct nominal value (sorted) or one ``{var}__bin{k}`` column per numeric
bin.  Cells hold the number of records of that unit falling in the column's
value or bin; with ``aggregator="sum"``/``"avg"`` numeric bin cells hold the
sum/mean of the variable's values instead.

Building a table is two passes: the first collects distinct values and fits
bins over all records, the second aggregates.  Bins fitted on one dataset can
be passed in so the same discretisation is applied to another.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional

import numpy as np

from . import binning
from ._io import atomic_open, dump_json, fmt_num
from .binning import BinSet, apply_bins, is_missing
from .gdelt_parser import COLUMN_ALIASES

logger = logging.getLogger(__name__)

AGGREGATORS = ("count", "sum", "avg")
RESOLUTIONS = ("day", "month")
MISSING = "MISSING"
DEFAULT_MAX_CARDINALITY = 10_000


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class NumericVar:
    name: str
    method: str = binning.EQUAL_WIDTH
    bins: int = 5

    def __post_init__(self):
        object.__setattr__(self, "method", binning.canonical_method(self.method))
        if self.bins < 1:
            raise FeatureError(f"{self.name}: bin count must be >= 1")


@dataclass(frozen=True)
class FeatureSpec:
    nominal_vars: tuple[str, ...] = ()
    numeric_vars: tuple[NumericVar, ...] = ()
    time_variable: str = "sql_date"
    resolution: str = "day"
    aggregator: str = "count"
    max_cardinality: int = DEFAULT_MAX_CARDINALITY

    def __post_init__(self):
        object.__setattr__(self, "nominal_vars", tuple(self.nominal_vars))
        object.__setattr__(
            self,
            "numeric_vars",
            tuple(v if isinstance(v, NumericVar) else NumericVar(*v) for v in self.numeric_vars),
        )
        names = [self.time_variable, *self.variables]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise FeatureError(f"variable names must be distinct, repeated: {dupes}")
        if self.aggregator not in AGGREGATORS:
            raise FeatureError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.resolution not in RESOLUTIONS:
            raise FeatureError(f"resolution must be one of {RESOLUTIONS}, got {self.resolution!r}")
        if self.max_cardinality < 1:
            raise FeatureError("max_cardinality must be >= 1")

    @property
    def variables(self) -> list[str]:
        return [*self.nominal_vars, *(v.name for v in self.numeric_vars)]

    def to_dict(self) -> dict:
        return {
            "time_variable": self.time_variable,
            "resolution": self.resolution,
            "nominal_vars": list(self.nominal_vars),
            "numeric_vars": [
                {"name": v.name, "method": v.method, "bins": v.bins} for v in self.numeric_vars
            ],
            "aggregator": self.aggregator,
            "max_cardinality": self.max_cardinality,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureSpec":
        numeric = []
        for v in d.get("numeric_vars", ()):
            if isinstance(v, str):
                numeric.append(NumericVar(v))
            else:
                numeric.append(NumericVar(v["name"], v.get("method", binning.EQUAL_WIDTH), v.get("bins", 5)))
        return cls(
            nominal_vars=tuple(d.get("nominal_vars", ())),
            numeric_vars=tuple(numeric),
            time_variable=d.get("time_variable", "sql_date"),
            resolution=d.get("resolution", "day"),
            aggregator=d.get("aggregator", "count"),
            max_cardinality=d.get("max_cardinality", DEFAULT_MAX_CARDINALITY),
        )


# --- field access ------------------------------------------------------------


def field_getter(name: str, sample: Any = None) -> Callable[[Any], Any]:
    """Accessor for ``name`` on mapping or attribute-style records.

    GDELT column names (``ActionGeo_FullName``) and dotted attribute paths
    (``action_geo.fullname``) are both accepted for event records.  When a
    ``sample`` record is given, an unknown field raises :class:`FeatureError`.
    """
    if sample is not None and isinstance(sample, Mapping):
        if name not in sample:
            raise FeatureError(f"unknown field {name!r}")
        return lambda rec: rec.get(name)

    path = COLUMN_ALIASES.get(name, name).split(".")
    if sample is not None:
        obj = sample
        for part in path:
            if not hasattr(obj, part):
                raise FeatureError(f"unknown field {name!r}")
            obj = getattr(obj, part)

    if len(path) == 1:
        attr = path[0]

        def get(rec):
            if isinstance(rec, Mapping):
                return rec.get(name)
            return getattr(rec, attr)

        return get

    def get_path(rec):
        if isinstance(rec, Mapping):
            return rec.get(name)
        for part in path:
            rec = getattr(rec, part)
        return rec

    return get_path


def to_time_unit(value: Any, resolution: str = "day") -> Optional[date]:
    """Coerce a time value to its day (or first-of-month) ``date``; None if unparseable."""
    d: Optional[date] = None
    if isinstance(value, datetime):
        d = value.date()
    elif isinstance(value, date):
        d = value
    elif isinstance(value, int) and not isinstance(value, bool):
        value = str(value)
    if d is None and isinstance(value, str):
        s = value.strip()
        try:
            if len(s) == 8 and s.isdigit():
                d = date(int(s[:4]), int(s[4:6]), int(s[6:]))
            elif len(s) == 7:
                d = date(int(s[:4]), int(s[5:7]), 1)
            else:
                d = date.fromisoformat(s[:10])
        except ValueError:
            d = None
    if d is None:
        return None
    return d.replace(day=1) if resolution == "month" else d


def format_unit(d: date, resolution: str) -> str:
    return d.strftime("%Y-%m") if resolution == "month" else d.isoformat()


def nominal_key(value: Any) -> str:
    return str(value)


# --- pass 1 ------------------------------------------------------------------


def distinct_values(
    records: Iterable[Any], var: str, max_cardinality: int = DEFAULT_MAX_CARDINALITY
) -> list[str]:
    """Sorted distinct non-missing values of ``var`` (as strings)."""
    records = list(records)
    getter = field_getter(var, records[0] if records else None)
    seen = {nominal_key(v) for v in map(getter, records) if not is_missing(v)}
    if len(seen) > max_cardinality:
        raise FeatureError(
            f"{var}: {len(seen)} distinct values exceeds max_cardinality={max_cardinality}"
        )
    return sorted(seen)


def fit_bins(records: Iterable[Any], var: str, method: str, n_bins: int) -> BinSet:
    records = list(records)
    getter = field_getter(var, records[0] if records else None)
    return binning.fit_values(map(getter, records), method, n_bins, variable=var)


# --- table -------------------------------------------------------------------


@dataclass
class FeatureTable:
    units: list[date]
    columns: list[str]
    values: np.ndarray
    spec: FeatureSpec
    bins: dict[str, BinSet] = field(default_factory=dict)
    mask: Optional[np.ndarray] = None
    labels: dict[str, str] = field(default_factory=dict)
    excluded_time: int = 0
    n_records: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.units)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def block(self, var: str) -> list[str]:
        """Derived column names belonging to source variable ``var``."""
        prefix = f"{var}__"
        return [c for c in self.columns if c.startswith(prefix)]

    def unit_labels(self) -> list[str]:
        return [format_unit(u, self.spec.resolution) for u in self.units]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.spec.time_variable, *self.columns])
        for label, row in zip(self.unit_labels(), self.values):
            w.writerow([label, *(fmt_num(x) for x in row)])
        text = buf.getvalue()
        if path is not None:
            with atomic_open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        out = {
            "spec": self.spec.to_dict(),
            "bins": {k: b.to_dict() for k, b in sorted(self.bins.items())},
            "columns": list(self.columns),
            "column_labels": dict(self.labels),
            "units": self.unit_labels(),
            "values": [[float(x) for x in row] for row in self.values],
            "excluded_time": self.excluded_time,
            "n_records": self.n_records,
        }
        if self.mask is not None:
            out["presence_mask"] = [[bool(x) for x in row] for row in self.mask]
        return out

    def to_json(self, path: str | Path | None = None) -> str:
        text = dump_json(self.to_dict())
        if path is not None:
            with atomic_open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path, spec: Optional[FeatureSpec] = None) -> "FeatureTable":
        """Read back a table written by :meth:`to_csv` (values and names only)."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise FeatureError(f"{path}: empty feature file")
        header = rows[0]
        resolution = "month" if rows[1:] and len(rows[1][0]) == 7 else "day"
        if spec is None:
            spec = FeatureSpec(time_variable=header[0], resolution=resolution)
        units = []
        for r in rows[1:]:
            u = to_time_unit(r[0], resolution)
            if u is None:
                raise FeatureError(f"{path}: bad temporal unit {r[0]!r}")
            units.append(u)
        values = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
        values = values.reshape(len(units), len(header) - 1)
        return cls(units, header[1:], values, spec)


def _value_label(var: str, value: str) -> str:
    return f"{var} = {value}"


def derive_features(
    records: Iterable[Any],
    spec: FeatureSpec,
    bins: Optional[Mapping[str, BinSet]] = None,
) -> FeatureTable:
    """Build the per-unit feature table for ``records`` under ``spec``.

    Records whose time value cannot be parsed are excluded and counted in
    ``excluded_time``.  ``bins`` may supply pre-fitted bin sets by variable
    name; variables without one are fitted on the included records.
    """
    records = list(records)
    sample = records[0] if records else None
    t_get = field_getter(spec.time_variable, sample)
    nom_get = {v: field_getter(v, sample) for v in spec.nominal_vars}
    num_get = {v.name: field_getter(v.name, sample) for v in spec.numeric_vars}

    included: list[tuple[date, Any]] = []
    excluded = 0
    for rec in records:
        unit = to_time_unit(t_get(rec), spec.resolution)
        if unit is None:
            excluded += 1
        else:
            included.append((unit, rec))
    if excluded:
        logger.warning("%d record(s) with unparseable %s excluded", excluded, spec.time_variable)

    # pass 1: column discovery and bin fitting
    columns: list[str] = []
    labels: dict[str, str] = {}
    nominal_index: dict[str, tuple[int, dict[str, int]]] = {}
    numeric_offset: dict[str, tuple[int, int]] = {}
    fitted: dict[str, BinSet] = {}

    for var in spec.nominal_vars:
        get = nom_get[var]
        seen = {nominal_key(v) for v in (get(r) for _, r in included) if not is_missing(v)}
        if len(seen) > spec.max_cardinality:
            raise FeatureError(
                f"{var}: {len(seen)} distinct values exceeds max_cardinality={spec.max_cardinality}"
            )
        missing_col = len(columns)
        columns.append(f"{var}__{MISSING}")
        labels[columns[-1]] = _value_label(var, "NULL")
        idx = {}
        for value in sorted(seen):
            idx[value] = len(columns)
            columns.append(f"{var}__{value}")
            labels[columns[-1]] = _value_label(var, value)
        nominal_index[var] = (missing_col, idx)

    for nv in spec.numeric_vars:
        get = num_get[nv.name]
        values = [get(r) for _, r in included]
        if bins and nv.name in bins:
            bs = bins[nv.name]
        elif any(not is_missing(v) for v in values):
            bs = binning.fit_values(values, nv.method, nv.bins, nv.name)
        else:
            # nothing to fit on: keep the requested bin columns, all records land in MISSING
            bs = None
        if bs is not None:
            fitted[nv.name] = bs
        n_bins = bs.effective_bins if bs is not None else nv.bins
        numeric_offset[nv.name] = (len(columns), n_bins)
        columns.append(f"{nv.name}__{MISSING}")
        labels[columns[-1]] = _value_label(nv.name, "NULL")
        for k in range(1, n_bins + 1):
            columns.append(f"{nv.name}__bin{k}")
            labels[columns[-1]] = _value_label(
                nv.name, f"bin{k} {binning.bin_label(bs, k)}" if bs is not None else f"bin{k}"
            )

    units = sorted({u for u, _ in included})
    row_of = {u: i for i, u in enumerate(units)}
    shape = (len(units), len(columns))
    values = np.zeros(shape, dtype=float)
    hits = np.zeros(shape, dtype=np.int64)

    # pass 2: aggregation
    use_values = spec.aggregator in ("sum", "avg")
    for unit, rec in included:
        i = row_of[unit]
        for var, (missing_col, idx) in nominal_index.items():
            v = nom_get[var](rec)
            j = missing_col if is_missing(v) else idx[nominal_key(v)]
            values[i, j] += 1
            hits[i, j] += 1
        for name, (off, _) in numeric_offset.items():
            v = num_get[name](rec)
            k = apply_bins(v, fitted[name]) if name in fitted else 0
            values[i, off + k] += float(v) if (use_values and k > 0) else 1.0
            hits[i, off + k] += 1

    mask = None
    if spec.aggregator == "avg":
        mask = hits > 0
        for off, n_bins in numeric_offset.values():
            cols = slice(off + 1, off + 1 + n_bins)
            np.divide(values[:, cols], hits[:, cols], out=values[:, cols], where=hits[:, cols] > 0)

    return FeatureTable(
        units=units,
        columns=columns,
        values=values,
        spec=spec,
        bins=fitted,
        mask=mask,
        labels=labels,
        excluded_time=excluded,
        n_records=len(included),
    )
