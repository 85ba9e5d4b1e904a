from __future__ import annotations

from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from gdeltkit import synth
from gdeltkit.gdelt_parser import EventRecord, GeoRef, parse_line

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def line_fields(event_id: int = 1, day: date = date(2013, 6, 1), seed: int = 0, **overrides) -> dict:
    """A valid daily-layout row as a column -> text mapping, with overrides."""
    f = synth.event_fields(event_id, day, np.random.default_rng(seed))
    f.update(overrides)
    return f


def make_line(**overrides) -> str:
    return synth.to_line(line_fields(**overrides))


_BASE: EventRecord = parse_line(make_line())


def make_record(**kw) -> EventRecord:
    """An EventRecord with the given attributes replaced (geo given as dicts or GeoRef)."""
    for g in ("actor1_geo", "actor2_geo", "action_geo"):
        if isinstance(kw.get(g), dict):
            kw[g] = GeoRef(**kw[g])
    return replace(_BASE, **kw)


@pytest.fixture
def record_factory():
    return make_record
