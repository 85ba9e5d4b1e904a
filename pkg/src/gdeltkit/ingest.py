"""Loaders for key events, market series and article corpora, plus date joins."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .gdelt_parser import EventRecord, with_flag

logger = logging.getLogger(__name__)

MARKET_COLUMNS = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")
EVENT_COLUMNS = ("date", "label", "source")
MANIFEST_COLUMNS = ("doc_id", "date", "url_host", "filename")


class LoadError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class KeyEvent:
    date: date
    label: str
    source: str = ""


@dataclass(frozen=True, slots=True)
class MarketBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: int

    @property
    def ohlc_consistent(self) -> bool:
        return self.low <= min(self.open, self.close) and self.high >= max(self.open, self.close)


@dataclass(frozen=True, slots=True)
class ArticleDoc:
    doc_id: str
    date: date
    url_host: Optional[str]
    text: str


@dataclass
class Corpus:
    docs: list[ArticleDoc] = field(default_factory=list)
    skipped_empty: int = 0

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self) -> Iterator[ArticleDoc]:
        return iter(self.docs)


def _iso_date(raw: str, where: str) -> date:
    try:
        return date.fromisoformat(raw.strip())
    except ValueError:
        raise LoadError(f"{where}: invalid date {raw!r}") from None


def _header(reader, required: Sequence[str], path: Path) -> dict[str, int]:
    """Map column name -> index for every header column; check ``required``."""
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise LoadError(f"{path}: empty file") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise LoadError(f"{path}: missing required column(s) {missing}")
    return {name: i for i, name in enumerate(header)}


def load_key_events(path: str | Path) -> list[KeyEvent]:
    """Read a ``date,label,source`` CSV of ground-truth events (``source`` optional)."""
    path = Path(path)
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        idx = _header(reader, EVENT_COLUMNS[:2], path)
        src = idx.get("source")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            label = row[idx["label"]].strip()
            if not label:
                raise LoadError(f"{path}:{lineno}: empty label")
            events.append(
                KeyEvent(
                    _iso_date(row[idx["date"]], f"{path}:{lineno}"),
                    label,
                    row[src].strip() if src is not None and src < len(row) else "",
                )
            )
    return events


def load_market(path: str | Path) -> list[MarketBar]:
    """Read a Yahoo-Finance style price CSV into bars sorted by ascending date.

    Header names must match exactly after trimming (order is free).  Rows that
    Yahoo marks ``null`` (holidays) are skipped.  Rows breaking the OHLC
    ordering are kept with a logged warning; duplicate dates are an error.
    """
    path = Path(path)
    bars: list[MarketBar] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        idx = _header(reader, MARKET_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            cells = {k: row[idx[k]].strip() for k in MARKET_COLUMNS}
            if any(v.lower() == "null" for v in cells.values()):
                logger.warning("%s:%d: null price row skipped", path, lineno)
                continue
            try:
                bar = MarketBar(
                    date=_iso_date(cells["Date"], f"{path}:{lineno}"),
                    open=float(cells["Open"]),
                    high=float(cells["High"]),
                    low=float(cells["Low"]),
                    close=float(cells["Close"]),
                    adj_close=float(cells["Adj Close"]),
                    volume=int(float(cells["Volume"])),
                )
            except ValueError as exc:
                raise LoadError(f"{path}:{lineno}: {exc}") from None
            if bar.adj_close <= 0:
                raise LoadError(f"{path}:{lineno}: non-positive Adj Close {bar.adj_close}")
            if bar.volume < 0:
                raise LoadError(f"{path}:{lineno}: negative Volume {bar.volume}")
            if not bar.ohlc_consistent:
                logger.warning("%s:%d: OHLC ordering violated on %s", path, lineno, bar.date)
            bars.append(bar)

    bars.sort(key=lambda b: b.date)
    for prev, cur in zip(bars, bars[1:]):
        if prev.date == cur.date:
            raise LoadError(f"{path}: duplicate date {cur.date.isoformat()}")
    return bars


def load_corpus(path: str | Path) -> Corpus:
    """Load pre-extracted article texts.

    ``path`` is either a JSON-lines file (``doc_id``, ``date``, ``url_host``,
    ``text`` per line), a manifest CSV, or a directory holding
    ``manifest.csv``.  Manifest filenames resolve relative to the manifest.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.csv"
    if path.suffix in (".jsonl", ".json"):
        rows = _corpus_rows_jsonl(path)
    else:
        rows = _corpus_rows_manifest(path)

    corpus = Corpus()
    seen: set[str] = set()
    for doc_id, day, host, text in rows:
        if doc_id in seen:
            raise LoadError(f"{path}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        if not text.strip():
            corpus.skipped_empty += 1
            continue
        corpus.docs.append(ArticleDoc(doc_id, day, host or None, text))
    return corpus


def _corpus_rows_jsonl(path: Path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            rows.append(
                (
                    str(obj["doc_id"]),
                    _iso_date(obj["date"], f"{path}:{lineno}"),
                    obj.get("url_host"),
                    obj.get("text") or "",
                )
            )
    return rows


def _corpus_rows_manifest(path: Path):
    base = path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        idx = _header(reader, MANIFEST_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            entries.append(
                (
                    row[idx["doc_id"]].strip(),
                    _iso_date(row[idx["date"]], f"{path}:{lineno}"),
                    row[idx["url_host"]].strip(),
                    base / row[idx["filename"]].strip(),
                )
            )
    missing = [str(e[3].relative_to(base)) for e in entries if not e[3].is_file()]
    if missing:
        raise LoadError(f"{path}: missing file(s) {missing}")
    return [(d, day, host, f.read_text(encoding="utf-8")) for d, day, host, f in entries]


# --- joins -------------------------------------------------------------------


def flagged_dates(events: Iterable[KeyEvent], before_days: int, after_days: int) -> set[date]:
    if before_days < 0 or after_days < 0:
        raise ValueError("window sizes must be non-negative")
    days: set[date] = set()
    for ev in events:
        for offset in range(-before_days, after_days + 1):
            days.add(ev.date + timedelta(days=offset))
    return days


def join_window(
    records: Iterable[EventRecord],
    events: Iterable[KeyEvent],
    before_days: int = 7,
    after_days: int = 14,
) -> Iterator[EventRecord]:
    """Set ``event_flag`` on records dated within [event - before, event + after].

    Both window ends are inclusive.  Records are neither dropped nor
    duplicated; every input record is yielded once with its flag set.
    """
    days = flagged_dates(events, before_days, after_days)
    for rec in records:
        yield with_flag(rec, 1 if rec.sql_date in days else 0)


def join_same_date(records: Iterable[EventRecord], events: Iterable[KeyEvent]) -> Iterator[EventRecord]:
    return join_window(records, events, 0, 0)
