"""Deterministic synthetic inputs: GDELT event rows, price series, key events, articles.

Everything here is driven by a seeded ``numpy`` generator so fixtures can be
regenerated byte for byte.
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .analytics import REGIONAL_HOSTS
from .gdelt_parser import SCHEMAS, get_schema

ACTORS = (
    "SINGAPORE", "MALAYSIA", "INDONESIA", "POLICE", "GOVERNMENT", "PRIME MINISTER",
    "STUDENT", "BUSINESS", "MILITARY", "CHINA", "UNITED STATES", "PROTESTER",
)
ACTOR_COUNTRIES = ("SGP", "MYS", "IDN", "CHN", "USA", "")
PLACES = (
    # (fullname, country, adm1, lat, lon, geo_type)
    ("Singapore", "SN", "SN", 1.3667, 103.8, 1),
    ("Toa Payoh, Singapore", "SN", "SN00", 1.3343, 103.8563, 4),
    ("Jurong, Singapore", "SN", "SN00", 1.3329, 103.7436, 4),
    ("Changi, Singapore", "SN", "SN00", 1.3644, 103.9915, 4),
    ("Little India, Singapore", "SN", "SN00", 1.3066, 103.8518, 4),
    ("Kuala Lumpur, Malaysia", "MY", "MY14", 3.1667, 101.7, 4),
    ("Jakarta, Indonesia", "ID", "ID04", -6.1744, 106.8294, 4),
)
OTHER_HOSTS = ("zeenews.india.com", "www.bbc.co.uk", "www.reuters.com", "news.yahoo.com")
# A spread of CAMEO roots with a few base/event codes each.
CODES = (
    ("01", "010", "010"), ("01", "013", "013"), ("02", "020", "020"), ("03", "036", "036"),
    ("04", "040", "040"), ("04", "042", "042"), ("05", "051", "051"), ("05", "057", "057"),
    ("06", "061", "061"), ("07", "071", "071"), ("08", "084", "0841"), ("09", "090", "090"),
    ("10", "100", "100"), ("11", "111", "111"), ("11", "112", "1122"), ("12", "120", "120"),
    ("13", "130", "130"), ("14", "141", "1411"), ("14", "145", "145"), ("17", "173", "173"),
    ("18", "180", "180"), ("19", "190", "190"), ("20", "200", "200"),
)


def _quad_class(root: str) -> int:
    r = int(root)
    if r <= 5:
        return 1
    if r <= 8:
        return 2
    if r <= 13:
        return 3
    return 4


def _goldstein(root: str, rng: np.random.Generator) -> float:
    base = {1: 3.0, 2: 6.0, 3: -3.0, 4: -8.0}[_quad_class(root)]
    return float(np.clip(round(base + rng.normal(0.0, 1.5), 1), -10.0, 10.0))


def event_fields(event_id: int, day: date, rng: np.random.Generator, with_url: bool = True) -> dict[str, str]:
    """One random event as a GDELT-column-name -> raw text mapping."""
    root, base, code = CODES[int(rng.integers(len(CODES)))]
    f: dict[str, str] = {name: "" for name in SCHEMAS["58col"].column_names}
    f["GLOBALEVENTID"] = str(event_id)
    f["SQLDATE"] = day.strftime("%Y%m%d")
    f["MonthYear"] = day.strftime("%Y%m")
    f["Year"] = str(day.year)
    f["FractionDate"] = f"{day.year + (day.timetuple().tm_yday - 1) / 365:.4f}"
    for n in (1, 2):
        if rng.random() < 0.85:
            name = ACTORS[int(rng.integers(len(ACTORS)))]
            f[f"Actor{n}Name"] = name
            f[f"Actor{n}Code"] = name[:3]
            f[f"Actor{n}CountryCode"] = ACTOR_COUNTRIES[int(rng.integers(len(ACTOR_COUNTRIES)))]
    f["IsRootEvent"] = "1" if rng.random() < 0.6 else "0"
    f["EventCode"], f["EventBaseCode"], f["EventRootCode"] = code, base, root
    f["QuadClass"] = str(_quad_class(root))
    f["GoldsteinScale"] = "" if rng.random() < 0.03 else f"{_goldstein(root, rng):.1f}"
    mentions = int(rng.integers(1, 40))
    f["NumMentions"] = str(mentions)
    f["NumSources"] = str(max(1, mentions // 4))
    f["NumArticles"] = str(mentions)
    f["AvgTone"] = f"{rng.normal(-1.0, 3.0):.4f}"
    for prefix in ("Actor1Geo", "Actor2Geo", "ActionGeo"):
        if prefix != "ActionGeo" and rng.random() < 0.3:
            continue
        if prefix == "ActionGeo" and rng.random() < 0.04:
            continue
        weights = np.array([0.45, 0.15, 0.1, 0.1, 0.1, 0.05, 0.05])
        place = int(rng.choice(len(PLACES), p=weights))
        fullname, cc, adm1, lat, lon, gtype = PLACES[place]
        f[f"{prefix}_Type"] = str(gtype)
        f[f"{prefix}_FullName"] = fullname
        f[f"{prefix}_CountryCode"] = cc
        f[f"{prefix}_ADM1Code"] = adm1
        f[f"{prefix}_Lat"] = f"{lat:.4f}"
        f[f"{prefix}_Long"] = f"{lon:.4f}"
        f[f"{prefix}_FeatureID"] = str(1_000_000 + place)
    f["DATEADDED"] = (day + timedelta(days=int(rng.integers(0, 2)))).strftime("%Y%m%d")
    if with_url:
        hosts = REGIONAL_HOSTS + OTHER_HOSTS
        host = hosts[int(rng.integers(len(hosts)))]
        f["SOURCEURL"] = f"http://{host}/news/{event_id}.html"
    return f


def to_line(fields: dict[str, str], schema: str = "58col") -> str:
    return "\t".join(fields.get(name, "") for name in get_schema(schema).column_names)


def event_lines(
    n_events: int, start: date, n_days: int, seed: int = 0, schema: str = "58col"
) -> list[str]:
    """``n_events`` rows spread over ``n_days`` consecutive days, sorted by date."""
    rng = np.random.default_rng(seed)
    with_url = get_schema(schema).width == SCHEMAS["58col"].width
    offsets = np.sort(rng.integers(0, n_days, size=n_events))
    return [
        to_line(event_fields(100_000 + i, start + timedelta(days=int(off)), rng, with_url), schema)
        for i, off in enumerate(offsets)
    ]


def market_csv(start: date, n_days: int, seed: int = 0, level: float = 3200.0) -> str:
    """Yahoo-style CSV of weekday bars covering ``n_days`` calendar days."""
    rng = np.random.default_rng(seed)
    lines = ["Date,Open,High,Low,Close,Adj Close,Volume"]
    close = level
    for off in range(n_days):
        d = start + timedelta(days=off)
        if d.weekday() >= 5:
            continue
        open_ = close * (1 + rng.normal(0, 0.002))
        close = open_ * (1 + rng.normal(0, 0.008))
        high = max(open_, close) * (1 + abs(rng.normal(0, 0.002)))
        low = min(open_, close) * (1 - abs(rng.normal(0, 0.002)))
        vol = int(rng.integers(1_000_000, 5_000_000))
        lines.append(f"{d.isoformat()},{open_:.2f},{high:.2f},{low:.2f},{close:.2f},{close:.2f},{vol}")
    return "\n".join(lines) + "\n"


def key_events_csv(start: date, n_days: int, seed: int = 0, n_events: int = 3) -> str:
    rng = np.random.default_rng(seed)
    offsets = sorted(int(o) for o in rng.choice(n_days, size=n_events, replace=False))
    lines = ["date,label,source"]
    for i, off in enumerate(offsets):
        lines.append(f"{(start + timedelta(days=off)).isoformat()},synthetic event {i + 1},synth")
    return "\n".join(lines) + "\n"


VOCAB_A = tuple(f"haze{w}" for w in "abcdefghijklmnopqrstuvwxyz") + tuple(
    f"smog{w}" for w in "abcdefghijklmnopqrstuvwx"
)
VOCAB_B = tuple(f"trade{w}" for w in "abcdefghijklmnopqrstuvwxyz") + tuple(
    f"port{w}" for w in "abcdefghijklmnopqrstuvwx"
)


def topic_docs(
    n_per_group: int = 40, words_per_doc: int = 60, seed: int = 0,
    vocabularies: tuple[tuple[str, ...], ...] = (VOCAB_A, VOCAB_B),
) -> list[tuple[str, int, str]]:
    """(doc_id, planted group, text) for documents drawn from disjoint vocabularies."""
    rng = np.random.default_rng(seed)
    docs = []
    for g, vocab in enumerate(vocabularies):
        for i in range(n_per_group):
            words = rng.choice(len(vocab), size=words_per_doc)
            docs.append((f"g{g}d{i:03d}", g, " ".join(vocab[j] for j in words)))
    return docs


def corpus_jsonl(start: date, n_days: int, seed: int = 0, n_per_group: int = 20) -> str:
    rng = np.random.default_rng(seed + 1)
    out = []
    for doc_id, _, text in topic_docs(n_per_group, 40, seed):
        d = start + timedelta(days=int(rng.integers(n_days)))
        host = REGIONAL_HOSTS[int(rng.integers(len(REGIONAL_HOSTS)))]
        out.append(json.dumps({"doc_id": doc_id, "date": d.isoformat(), "url_host": host, "text": text}, sort_keys=True))
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class MiniFixture:
    events: Path
    market: Path
    key_events: Path
    corpus: Path


MINI_START = date(2013, 6, 1)
MINI_DAYS = 60
MINI_EVENTS = 5000


def write_mini_fixture(
    directory: str | Path,
    seed: int = 0,
    n_events: int = MINI_EVENTS,
    start: date = MINI_START,
    n_days: int = MINI_DAYS,
    compress: bool = True,
) -> MiniFixture:
    """Write the end-to-end fixture set (events, market, key events, corpus)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tsv = ("\n".join(event_lines(n_events, start, n_days, seed)) + "\n").encode("utf-8")
    events = directory / ("events.tsv.gz" if compress else "events.tsv")
    events.write_bytes(gzip.compress(tsv, mtime=0) if compress else tsv)
    market = directory / "market.csv"
    market.write_text(market_csv(start - timedelta(days=3), n_days + 10, seed), encoding="utf-8")
    key = directory / "key_events.csv"
    key.write_text(key_events_csv(start, n_days, seed), encoding="utf-8")
    corpus = directory / "corpus.jsonl"
    corpus.write_text(corpus_jsonl(start, n_days, seed), encoding="utf-8")
    return MiniFixture(events, market, key, corpus)


def find_fixture(directory: str | Path) -> Optional[MiniFixture]:
    d = Path(directory)
    events = d / "events.tsv.gz"
    if not events.exists():
        events = d / "events.tsv"
    parts = MiniFixture(events, d / "market.csv", d / "key_events.csv", d / "corpus.jsonl")
    return parts if all(p.exists() for p in (parts.events, parts.market, parts.key_events, parts.corpus)) else None
