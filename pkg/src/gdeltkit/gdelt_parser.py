"""Parser for GDELT 1.0 event-table files.

GDELT 1.0 event files are tab-delimited, have no header row and come in two
layouts: the historical backfile (57 columns) and the daily update files that
append a trailing ``SOURCEURL`` column (58 columns).  The layout is declared
per file; the parser never guesses it from the data.
"""
from __future__ import annotations

import gzip
import json
import logging
import math
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional
from urllib.parse import urlsplit

logger = logging.getLogger(__name__)

QUAD_CLASS_NAMES = {
    1: "Verbal Cooperation",
    2: "Material Cooperation",
    3: "Verbal Conflict",
    4: "Material Conflict",
}

# Reject reason codes.
COLUMN_COUNT = "column_count"
FIELD_FORMAT = "field_format"
DOMAIN = "domain"

# Warning flags carried on accepted records.
HIERARCHY_VIOLATION = "hierarchy_violation"


@dataclass(frozen=True, slots=True)
class GeoRef:
    geo_type: Optional[int] = None
    fullname: Optional[str] = None
    country_code: Optional[str] = None
    adm1: Optional[str] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    feature_id: Optional[str] = None

    @property
    def has_coordinates(self) -> bool:
        return self.latitude is not None and self.longitude is not None

    @property
    def malformed(self) -> bool:
        """Coordinates without a country code, or only half a coordinate pair."""
        if (self.latitude is None) != (self.longitude is None):
            return True
        return self.has_coordinates and not self.country_code


@dataclass(frozen=True, slots=True)
class EventRecord:
    global_event_id: int
    sql_date: date
    actor1_code: Optional[str]
    actor1_name: Optional[str]
    actor1_country_code: Optional[str]
    actor1_known_group_code: Optional[str]
    actor1_ethnic_code: Optional[str]
    actor1_religion1_code: Optional[str]
    actor1_religion2_code: Optional[str]
    actor1_type1_code: Optional[str]
    actor1_type2_code: Optional[str]
    actor1_type3_code: Optional[str]
    actor2_code: Optional[str]
    actor2_name: Optional[str]
    actor2_country_code: Optional[str]
    actor2_known_group_code: Optional[str]
    actor2_ethnic_code: Optional[str]
    actor2_religion1_code: Optional[str]
    actor2_religion2_code: Optional[str]
    actor2_type1_code: Optional[str]
    actor2_type2_code: Optional[str]
    actor2_type3_code: Optional[str]
    is_root_event: bool
    event_code: str
    event_base_code: str
    event_root_code: str
    quad_class: int
    goldstein_scale: Optional[float]
    num_mentions: Optional[int]
    num_sources: Optional[int]
    num_articles: Optional[int]
    avg_tone: Optional[float]
    actor1_geo: GeoRef
    actor2_geo: GeoRef
    action_geo: GeoRef
    date_added: date
    source_url: Optional[str] = None
    warnings: tuple[str, ...] = ()
    event_flag: int = 0

    @property
    def source_host(self) -> Optional[str]:
        return extract_host(self.source_url)

    @property
    def quad_class_name(self) -> str:
        return QUAD_CLASS_NAMES[self.quad_class]


class RecordRejected(ValueError):
    """Raised by :func:`parse_line` for a line that cannot become a record."""

    def __init__(self, reason: str, field: Optional[str] = None, detail: str = ""):
        self.reason = reason
        self.field = field
        msg = reason if field is None else f"{reason}: {field}"
        super().__init__(f"{msg} {detail}".strip())


# --- column layout -----------------------------------------------------------
#
# (GDELT column name, record attribute or None to ignore, value kind).
# Geo attributes use "<geo>.<attr>" and are assembled into GeoRef objects.

def _actor_columns(n: int) -> list[tuple[str, Optional[str], str]]:
    p = f"actor{n}_"
    return [
        (f"Actor{n}Code", p + "code", "str"),
        (f"Actor{n}Name", p + "name", "str"),
        (f"Actor{n}CountryCode", p + "country_code", "str"),
        (f"Actor{n}KnownGroupCode", p + "known_group_code", "str"),
        (f"Actor{n}EthnicCode", p + "ethnic_code", "str"),
        (f"Actor{n}Religion1Code", p + "religion1_code", "str"),
        (f"Actor{n}Religion2Code", p + "religion2_code", "str"),
        (f"Actor{n}Type1Code", p + "type1_code", "str"),
        (f"Actor{n}Type2Code", p + "type2_code", "str"),
        (f"Actor{n}Type3Code", p + "type3_code", "str"),
    ]


def _geo_columns(prefix: str, geo: str) -> list[tuple[str, Optional[str], str]]:
    return [
        (f"{prefix}_Type", f"{geo}.geo_type", "geo_type"),
        (f"{prefix}_FullName", f"{geo}.fullname", "str"),
        (f"{prefix}_CountryCode", f"{geo}.country_code", "str"),
        (f"{prefix}_ADM1Code", f"{geo}.adm1", "str"),
        (f"{prefix}_Lat", f"{geo}.latitude", "lat"),
        (f"{prefix}_Long", f"{geo}.longitude", "lon"),
        (f"{prefix}_FeatureID", f"{geo}.feature_id", "str"),
    ]


_BACKFILE_COLUMNS: list[tuple[str, Optional[str], str]] = [
    ("GLOBALEVENTID", "global_event_id", "id"),
    ("SQLDATE", "sql_date", "date"),
    ("MonthYear", None, "skip"),
    ("Year", None, "skip"),
    ("FractionDate", None, "skip"),
    *_actor_columns(1),
    *_actor_columns(2),
    ("IsRootEvent", "is_root_event", "bool"),
    ("EventCode", "event_code", "code4"),
    ("EventBaseCode", "event_base_code", "code3"),
    ("EventRootCode", "event_root_code", "code2"),
    ("QuadClass", "quad_class", "quad"),
    ("GoldsteinScale", "goldstein_scale", "goldstein"),
    ("NumMentions", "num_mentions", "count"),
    ("NumSources", "num_sources", "count"),
    ("NumArticles", "num_articles", "count"),
    ("AvgTone", "avg_tone", "float"),
    *_geo_columns("Actor1Geo", "actor1_geo"),
    *_geo_columns("Actor2Geo", "actor2_geo"),
    *_geo_columns("ActionGeo", "action_geo"),
    ("DATEADDED", "date_added", "date"),
]


@dataclass(frozen=True)
class Schema:
    name: str
    columns: tuple[tuple[str, Optional[str], str], ...]

    @property
    def width(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> list[str]:
        return [c[0] for c in self.columns]


SCHEMAS = {
    "58col": Schema("58col", tuple(_BACKFILE_COLUMNS + [("SOURCEURL", "source_url", "str")])),
    "57col": Schema("57col", tuple(_BACKFILE_COLUMNS)),
}
SCHEMA_ALIASES = {"daily": "58col", "backfile": "57col"}

# GDELT column names (plus the "mainURL" alias) -> record attribute paths,
# so feature specs can use either spelling.
COLUMN_ALIASES: dict[str, str] = {
    name: attr for name, attr, _ in SCHEMAS["58col"].columns if attr is not None
}
COLUMN_ALIASES["mainURL"] = "source_host"


def get_schema(name: str | Schema) -> Schema:
    if isinstance(name, Schema):
        return name
    key = SCHEMA_ALIASES.get(name, name)
    try:
        return SCHEMAS[key]
    except KeyError:
        raise ValueError(
            f"unknown schema {name!r}; expected one of {sorted(SCHEMAS) + sorted(SCHEMA_ALIASES)}"
        ) from None


# --- field converters --------------------------------------------------------

_DIGITS = re.compile(r"\d+")


def _parse_int(raw: str, name: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise RecordRejected(FIELD_FORMAT, name, repr(raw)) from None


def _parse_float(raw: str, name: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise RecordRejected(FIELD_FORMAT, name, repr(raw)) from None
    if not math.isfinite(value):
        raise RecordRejected(FIELD_FORMAT, name, repr(raw))
    return value


def parse_yyyymmdd(raw: str, name: str = "date") -> date:
    if len(raw) != 8 or not raw.isdigit():
        raise RecordRejected(FIELD_FORMAT, name, repr(raw))
    try:
        return date(int(raw[:4]), int(raw[4:6]), int(raw[6:]))
    except ValueError:
        raise RecordRejected(FIELD_FORMAT, name, repr(raw)) from None


def _convert(kind: str, raw: str, name: str) -> Any:
    if kind == "str":
        return raw or None
    if kind == "id":
        value = _parse_int(raw, name)
        if value < 0:
            raise RecordRejected(DOMAIN, name, repr(raw))
        return value
    if kind == "date":
        return parse_yyyymmdd(raw, name)
    if kind == "bool":
        if raw not in ("0", "1"):
            raise RecordRejected(FIELD_FORMAT, name, repr(raw))
        return raw == "1"
    if kind in ("code2", "code3", "code4"):
        longest = int(kind[-1])
        if not _DIGITS.fullmatch(raw) or not 2 <= len(raw) <= longest:
            raise RecordRejected(FIELD_FORMAT, name, repr(raw))
        return raw
    if kind == "quad":
        value = _parse_int(raw, name)
        if value not in QUAD_CLASS_NAMES:
            raise RecordRejected(DOMAIN, name, repr(raw))
        return value
    if not raw:
        return None
    if kind == "float":
        return _parse_float(raw, name)
    if kind == "goldstein":
        value = _parse_float(raw, name)
        if not -10.0 <= value <= 10.0:
            raise RecordRejected(DOMAIN, name, repr(raw))
        return value
    if kind in ("count", "geo_type"):
        value = _parse_int(raw, name)
        if value < 0:
            raise RecordRejected(DOMAIN, name, repr(raw))
        return value
    if kind == "lat":
        value = _parse_float(raw, name)
        if not -90.0 <= value <= 90.0:
            raise RecordRejected(DOMAIN, name, repr(raw))
        return value
    if kind == "lon":
        value = _parse_float(raw, name)
        if not -180.0 <= value <= 180.0:
            raise RecordRejected(DOMAIN, name, repr(raw))
        return value
    if kind == "skip":
        return None
    raise AssertionError(f"unknown column kind {kind}")


def parse_line(line: str, schema: str | Schema = "58col") -> EventRecord:
    """Parse one tab-delimited event row.

    Empty fields become ``None``.  Raises :class:`RecordRejected` with reason
    ``column_count``, ``field_format`` (naming the field) or ``domain``.
    """
    schema = get_schema(schema)
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != schema.width:
        raise RecordRejected(COLUMN_COUNT, None, f"expected {schema.width}, got {len(parts)}")

    values: dict[str, Any] = {}
    geos: dict[str, dict[str, Any]] = {"actor1_geo": {}, "actor2_geo": {}, "action_geo": {}}
    for raw, (name, attr, kind) in zip(parts, schema.columns):
        if attr is None:
            continue
        value = _convert(kind, raw.strip(), name)
        if "." in attr:
            geo, key = attr.split(".")
            geos[geo][key] = value
        else:
            values[attr] = value
    for geo, kw in geos.items():
        values[geo] = GeoRef(**kw)

    flags = []
    code, base, root = values["event_code"], values["event_base_code"], values["event_root_code"]
    if not (base.startswith(root) and code.startswith(base)):
        flags.append(HIERARCHY_VIOLATION)
    for geo in geos:
        if values[geo].malformed:
            flags.append(f"geo_malformed:{geo}")
    values["warnings"] = tuple(flags)
    return EventRecord(**values)


# --- reports and streaming ---------------------------------------------------


@dataclass(frozen=True, slots=True)
class Reject:
    line: int
    reason: str
    field: Optional[str] = None


@dataclass
class ParseReport:
    lines_read: int = 0
    records_accepted: int = 0
    records_rejected: int = 0
    skipped_blank: int = 0
    rejects: list[Reject] = field(default_factory=list)
    diagnostics: Counter = field(default_factory=Counter)

    def merge(self, other: "ParseReport") -> None:
        """Fold ``other`` (a later chunk of the same input) into this report."""
        self.lines_read += other.lines_read
        self.records_accepted += other.records_accepted
        self.records_rejected += other.records_rejected
        self.skipped_blank += other.skipped_blank
        self.rejects.extend(other.rejects)
        self.diagnostics.update(other.diagnostics)

    def to_dict(self) -> dict:
        return {
            "lines_read": self.lines_read,
            "records_accepted": self.records_accepted,
            "records_rejected": self.records_rejected,
            "skipped_blank": self.skipped_blank,
            "rejects": [asdict(r) for r in self.rejects],
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _decode(raw: bytes, report: ParseReport) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        report.diagnostics["encoding_replaced"] += 1
        return raw.decode("utf-8", errors="replace")


def parse_lines(
    lines: Iterable[str | bytes],
    schema: str | Schema = "58col",
    report: Optional[ParseReport] = None,
    first_line: int = 1,
) -> Iterator[EventRecord]:
    """Yield accepted records from ``lines``, accounting for every line in ``report``."""
    schema = get_schema(schema)
    if report is None:
        report = ParseReport()
    for lineno, line in enumerate(lines, start=first_line):
        report.lines_read += 1
        if isinstance(line, bytes):
            line = _decode(line, report)
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            report.skipped_blank += 1
            continue
        try:
            record = parse_line(line, schema)
        except RecordRejected as exc:
            report.records_rejected += 1
            report.rejects.append(Reject(lineno, exc.reason, exc.field))
            continue
        report.records_accepted += 1
        for flag in record.warnings:
            report.diagnostics[flag.split(":")[0]] += 1
        yield record


def _read_raw_lines(path: Path) -> list[bytes]:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return lines


def _parse_chunk(args: tuple[list[bytes], Schema, int]) -> tuple[list[EventRecord], ParseReport]:
    lines, schema, first = args
    report = ParseReport()
    records = list(parse_lines(lines, schema, report, first_line=first))
    return records, report


def parse_file(
    path: str | Path,
    schema: str | Schema = "58col",
    workers: int = 1,
    chunk_lines: int = 50_000,
) -> tuple[list[EventRecord], ParseReport]:
    """Parse a whole (optionally gzipped) file.

    With ``workers > 1`` the file is split into line chunks that are parsed in
    separate processes; chunk results are merged back in input order, so the
    output is identical to a sequential parse.
    """
    schema = get_schema(schema)
    lines = _read_raw_lines(Path(path))
    chunks = [
        (lines[i : i + chunk_lines], schema, i + 1)
        for i in range(0, len(lines), chunk_lines)
    ]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_parse_chunk, chunks))
    else:
        results = [_parse_chunk(c) for c in chunks]

    records: list[EventRecord] = []
    report = ParseReport()
    for chunk_records, chunk_report in results:
        records.extend(chunk_records)
        report.merge(chunk_report)
    return records, report


def filter_country(records: Iterable[EventRecord], code: str) -> Iterator[EventRecord]:
    """Keep records whose ``action_geo.country_code`` equals ``code`` (case-insensitive)."""
    if not code:
        raise ValueError("country code must be non-empty")
    wanted = code.strip().upper()
    for rec in records:
        cc = rec.action_geo.country_code
        if cc is not None and cc.upper() == wanted:
            yield rec


def extract_host(url: Optional[str], tally: Optional[Counter] = None) -> Optional[str]:
    """Lowercased host of ``url`` without port or credentials.

    Returns ``None`` for a missing URL, and for a URL with no parseable host
    (the latter is counted under ``invalid_url`` in ``tally`` when given).
    """
    if url is None or url == "":
        return None
    try:
        host = urlsplit(url.strip()).hostname
    except ValueError:
        host = None
    if not host or any(ch.isspace() for ch in host):
        if tally is not None:
            tally["invalid_url"] += 1
        return None
    return host


# --- record (de)serialisation ------------------------------------------------

_GEO_FIELDS = ("actor1_geo", "actor2_geo", "action_geo")
_DATE_FIELDS = ("sql_date", "date_added")


def record_to_dict(rec: EventRecord) -> dict:
    out: dict[str, Any] = {}
    for f in fields(EventRecord):
        value = getattr(rec, f.name)
        if f.name in _GEO_FIELDS:
            value = {g.name: getattr(value, g.name) for g in fields(GeoRef)}
        elif f.name in _DATE_FIELDS:
            value = value.isoformat()
        elif f.name == "warnings":
            value = list(value)
        out[f.name] = value
    return out


def record_from_dict(d: dict) -> EventRecord:
    kw = dict(d)
    for name in _GEO_FIELDS:
        kw[name] = GeoRef(**kw[name])
    for name in _DATE_FIELDS:
        kw[name] = date.fromisoformat(kw[name])
    kw["warnings"] = tuple(kw.get("warnings", ()))
    return EventRecord(**kw)


def write_records(records: Iterable[EventRecord], fh) -> int:
    n = 0
    for rec in records:
        fh.write(json.dumps(record_to_dict(rec), sort_keys=True, ensure_ascii=False))
        fh.write("\n")
        n += 1
    return n


def read_records_jsonl(path: str | Path) -> list[EventRecord]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_dict(json.loads(line)) for line in fh if line.strip()]


def with_flag(rec: EventRecord, flag: int) -> EventRecord:
    return rec if rec.event_flag == flag else replace(rec, event_flag=flag)
