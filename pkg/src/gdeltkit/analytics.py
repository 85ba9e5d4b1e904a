"""Aggregation views over event records (monthly trends, bubbles, geomap cells,
CAMEO code hierarchy, actor network), emitted as plot-ready rows."""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from ._io import dump_json, write_csv, atomic_open
from .gdelt_parser import EventRecord, HIERARCHY_VIOLATION, extract_host

logger = logging.getLogger(__name__)

# Regional Singapore/Malaysia/Indonesia outlets used for the Material
# Conflict bubble plot.
REGIONAL_HOSTS = (
    "www.channelnewsasia.com",
    "news.asiaone.com",
    "www.straitstimes.com",
    "sg.news.yahoo.com",
    "www.todayonline.com",
    "www.businesstimes.com.sg",
    "www.singaporestar.com",
    "www.thestar.com.my",
    "www.themalaysianinsider.com",
    "www.themalaymailonline.com",
    "www.nst.com.my",
    "www.thejakartapost.com",
)


@dataclass
class AggRow:
    key: tuple
    n_records: int = 0
    count: int = 0
    sum: float = 0.0
    n_missing: int = 0
    event_flag: Optional[int] = None
    flags: tuple[str, ...] = ()

    @property
    def avg(self) -> Optional[float]:
        return self.sum / self.count if self.count > 0 else None

    def add(self, goldstein: Optional[float]) -> None:
        self.n_records += 1
        if goldstein is None:
            self.n_missing += 1
        else:
            self.count += 1
            self.sum += goldstein


@dataclass
class AggView:
    """Rows of one view plus the tallies of records it left out."""

    name: str
    key_names: tuple[str, ...]
    rows: list[AggRow]
    tallies: dict[str, int] = field(default_factory=dict)

    @property
    def header(self) -> list[str]:
        return [
            *self.key_names,
            "n_records",
            "sum_goldstein",
            "count_goldstein",
            "avg_goldstein",
            "n_missing_goldstein",
            "event_flag",
            "flags",
        ]

    def table(self) -> list[list[Any]]:
        out = []
        for r in self.rows:
            out.append(
                [
                    *(_key_text(k) for k in r.key),
                    r.n_records,
                    r.sum,
                    r.count,
                    r.avg,
                    r.n_missing,
                    "" if r.event_flag is None else r.event_flag,
                    ";".join(r.flags),
                ]
            )
        return out

    def to_csv(self, path: str | Path) -> int:
        return write_csv(path, self.header, self.table())

    def to_json(self, path: str | Path | None = None) -> str:
        text = dump_json(
            {
                "view": self.name,
                "key_names": list(self.key_names),
                "tallies": dict(sorted(self.tallies.items())),
                "rows": [dict(zip(self.header, row)) for row in self.table()],
            }
        )
        if path is not None:
            with atomic_open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _key_text(k: Any) -> Any:
    if isinstance(k, date):
        return k.strftime("%Y-%m")
    return k


def month_of(d: date) -> date:
    return d.replace(day=1)


def _month_range(first: date, last: date) -> list[date]:
    months = []
    y, m = first.year, first.month
    while (y, m) <= (last.year, last.month):
        months.append(date(y, m, 1))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return months


@dataclass(frozen=True)
class FilterCriteria:
    """Record filter for the bubble view; empty criteria keep everything.

    ``event_flag`` is a month-level requirement: a month passes when any of its
    records (before the other criteria) carries that key-event flag.
    """

    quad_classes: frozenset[int] = frozenset()
    is_root_event: Optional[bool] = None
    hosts: frozenset[str] = frozenset()
    start: Optional[date] = None
    end: Optional[date] = None
    event_flag: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "quad_classes", frozenset(self.quad_classes))
        object.__setattr__(self, "hosts", frozenset(h.lower() for h in self.hosts))

    @property
    def empty(self) -> bool:
        return (
            not self.quad_classes
            and self.is_root_event is None
            and not self.hosts
            and self.start is None
            and self.end is None
            and self.event_flag is None
        )

    def to_dict(self) -> dict:
        return {
            "quad_classes": sorted(self.quad_classes),
            "is_root_event": self.is_root_event,
            "hosts": sorted(self.hosts),
            "start": self.start.isoformat() if self.start else None,
            "end": self.end.isoformat() if self.end else None,
            "event_flag": self.event_flag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterCriteria":
        return cls(
            quad_classes=frozenset(d.get("quad_classes") or ()),
            is_root_event=d.get("is_root_event"),
            hosts=frozenset(d.get("hosts") or ()),
            start=date.fromisoformat(d["start"]) if d.get("start") else None,
            end=date.fromisoformat(d["end"]) if d.get("end") else None,
            event_flag=d.get("event_flag"),
        )


def in_date_range(records: Iterable[EventRecord], start: Optional[date], end: Optional[date]):
    for r in records:
        if (start is None or r.sql_date >= start) and (end is None or r.sql_date <= end):
            yield r


# --- monthly trend and bubble views ------------------------------------------


def monthly_goldstein(
    records: Iterable[EventRecord], group_by_quadclass: bool = False, zero_fill: bool = False
) -> AggView:
    """Sum, count and average GoldsteinScale per month (optionally per QuadClass).

    Months without records produce no row unless ``zero_fill`` is set, which
    inserts empty rows for every month (and quad class) between the first and
    last month seen.  Records without a score count toward ``n_missing`` only.
    """
    groups: dict[tuple, AggRow] = {}
    for r in records:
        key = (month_of(r.sql_date), r.quad_class) if group_by_quadclass else (month_of(r.sql_date),)
        row = groups.get(key)
        if row is None:
            row = groups[key] = AggRow(key)
        row.add(r.goldstein_scale)
    if zero_fill and groups:
        months = _month_range(min(k[0] for k in groups), max(k[0] for k in groups))
        quads = (1, 2, 3, 4) if group_by_quadclass else (None,)
        for m in months:
            for q in quads:
                key = (m, q) if q is not None else (m,)
                groups.setdefault(key, AggRow(key))
    names = ("month", "quad_class") if group_by_quadclass else ("month",)
    return AggView("monthly", names, [groups[k] for k in sorted(groups)])


def bubble_series(records: Iterable[EventRecord], criteria: FilterCriteria = FilterCriteria()) -> AggView:
    """Monthly avg/sum/count of GoldsteinScale with a key-event flag per month.

    Host criteria compare :func:`extract_host` of each record's source URL with
    the whitelist; records without a source URL are kept (host filter skipped)
    and counted in the ``host_filter_skipped`` tally.
    """
    records = list(records)
    month_flag: dict[date, int] = defaultdict(int)
    for r in records:
        m = month_of(r.sql_date)
        month_flag[m] = max(month_flag[m], r.event_flag)

    tallies: Counter = Counter()
    groups: dict[date, AggRow] = {}
    for r in in_date_range(records, criteria.start, criteria.end):
        if criteria.quad_classes and r.quad_class not in criteria.quad_classes:
            continue
        if criteria.is_root_event is not None and r.is_root_event != criteria.is_root_event:
            continue
        if criteria.hosts:
            if not r.source_url:
                tallies["host_filter_skipped"] += 1
            else:
                host = extract_host(r.source_url, tallies)
                if host not in criteria.hosts:
                    continue
        m = month_of(r.sql_date)
        if criteria.event_flag is not None and month_flag[m] != criteria.event_flag:
            continue
        row = groups.get(m)
        if row is None:
            row = groups[m] = AggRow((m,), event_flag=month_flag[m])
        row.add(r.goldstein_scale)
    if tallies["host_filter_skipped"]:
        logger.warning(
            "%d record(s) lack a source URL; host filter skipped for them",
            tallies["host_filter_skipped"],
        )
    return AggView("bubble", ("month",), [groups[m] for m in sorted(groups)], dict(tallies))


# --- geomap ------------------------------------------------------------------


def snap(value: float, cell: float) -> float:
    """Lower edge of the grid cell holding ``value``."""
    return round(math.floor(value / cell) * cell, 9)


def geomap_bins(
    records: Iterable[EventRecord],
    cell_degrees: float = 0.01,
    exclude_country_centroid: bool = False,
    country_name: Optional[str] = None,
) -> AggView:
    """Group records by ActionGeo coordinates floored onto a square grid.

    With ``exclude_country_centroid`` records whose ActionGeo full name is
    exactly ``country_name`` (case-insensitive) are dropped first; GDELT puts
    those at the country's centroid rather than a real location.
    """
    if cell_degrees <= 0:
        raise ValueError("cell_degrees must be positive")
    if exclude_country_centroid and not country_name:
        raise ValueError("country_name is required when excluding the country centroid")
    target = country_name.strip().casefold() if country_name else None
    tallies: Counter = Counter()
    groups: dict[tuple, AggRow] = {}
    for r in records:
        geo = r.action_geo
        if exclude_country_centroid and geo.fullname and geo.fullname.strip().casefold() == target:
            tallies["excluded_country_centroid"] += 1
            continue
        if not geo.has_coordinates:
            tallies["excluded_no_coordinates"] += 1
            continue
        key = (snap(geo.latitude, cell_degrees), snap(geo.longitude, cell_degrees))
        row = groups.get(key)
        if row is None:
            row = groups[key] = AggRow(key)
        row.add(r.goldstein_scale)
    return AggView("geomap", ("lat_cell", "lon_cell"), [groups[k] for k in sorted(groups)], dict(tallies))


# --- CAMEO hierarchy -----------------------------------------------------------


@dataclass
class CodeNode:
    code: str
    level: str
    agg: AggRow
    children: dict[str, "CodeNode"] = field(default_factory=dict)

    def child(self, code: str, level: str) -> "CodeNode":
        node = self.children.get(code)
        if node is None:
            node = self.children[code] = CodeNode(code, level, AggRow((code,)))
        return node

    def walk(self):
        yield self
        for code in sorted(self.children):
            yield from self.children[code].walk()

    def leaves(self) -> list["CodeNode"]:
        return [n for n in self.walk() if not n.children and n.level == "event"]


def hierarchy_rollup(records: Iterable[EventRecord]) -> CodeNode:
    """Three-level EventRootCode > EventBaseCode > EventCode tree of counts and sums.

    Records whose codes are not prefixes of one another are placed under their
    literal codes and the path is flagged ``hierarchy_violation``.
    """
    root = CodeNode("", "all", AggRow(("",)))
    for r in records:
        g = r.goldstein_scale
        bad = HIERARCHY_VIOLATION in r.warnings or not (
            r.event_base_code.startswith(r.event_root_code) and r.event_code.startswith(r.event_base_code)
        )
        path = [root]
        path.append(path[-1].child(r.event_root_code, "root"))
        path.append(path[-1].child(r.event_base_code, "base"))
        path.append(path[-1].child(r.event_code, "event"))
        for node in path:
            node.agg.add(g)
            if bad and node is not root and HIERARCHY_VIOLATION not in node.agg.flags:
                node.agg.flags = (*node.agg.flags, HIERARCHY_VIOLATION)
    return root


def hierarchy_view(tree: CodeNode) -> AggView:
    """Flatten a code tree for a treemap: one row per node below the root."""
    rows = []

    def visit(node: CodeNode, trail: tuple[str, ...]):
        for code in sorted(node.children):
            child = node.children[code]
            key = (trail + (code,) + ("", "", ""))[:3]
            rows.append(
                AggRow(
                    (child.level, *key),
                    child.agg.n_records,
                    child.agg.count,
                    child.agg.sum,
                    child.agg.n_missing,
                    None,
                    child.agg.flags,
                )
            )
            visit(child, trail + (code,))

    visit(tree, ())
    return AggView("hierarchy", ("level", "root_code", "base_code", "event_code"), rows)


def word_cloud(tree: CodeNode) -> AggView:
    """Per-EventCode totals (leaf list of the hierarchy, merged by code)."""
    merged: dict[str, AggRow] = {}
    for leaf in tree.leaves():
        row = merged.setdefault(leaf.code, AggRow((leaf.code,)))
        row.n_records += leaf.agg.n_records
        row.count += leaf.agg.count
        row.sum += leaf.agg.sum
        row.n_missing += leaf.agg.n_missing
    return AggView("wordcloud", ("event_code",), [merged[c] for c in sorted(merged)])


# --- actor network -----------------------------------------------------------


def actor_network(records: Iterable[EventRecord]) -> AggView:
    """Undirected interaction counts among names seen as both Actor1 and Actor2.

    An edge's ``n_records`` is the number of records pairing the two names in
    either role order; self-pairs are kept.
    """
    records = list(records)
    as1 = {r.actor1_name for r in records if r.actor1_name}
    as2 = {r.actor2_name for r in records if r.actor2_name}
    nodes = as1 & as2
    edges: dict[tuple[str, str], AggRow] = {}
    for r in records:
        a, b = r.actor1_name, r.actor2_name
        if a in nodes and b in nodes:
            key = (a, b) if a <= b else (b, a)
            row = edges.get(key)
            if row is None:
                row = edges[key] = AggRow(key)
            row.add(r.goldstein_scale)
    view = AggView("network", ("actor_a", "actor_b"), [edges[k] for k in sorted(edges)])
    view.tallies["nodes"] = len(nodes)
    return view


def date_span(records: Sequence[EventRecord]) -> str:
    if not records:
        return "empty"
    lo = min(r.sql_date for r in records)
    hi = max(r.sql_date for r in records)
    return f"{lo:%Y%m%d}-{hi:%Y%m%d}"
