from __future__ import annotations

import csv
import json
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from gdeltkit import _io, synth
from gdeltkit.cli import main
from gdeltkit.gdelt_parser import parse_file, read_records_jsonl

from conftest import make_line


def write_tsv(path: Path, lines) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def mini(fixtures_dir) -> Path:
    return fixtures_dir / "mini"


def test_parse_writes_records_report_and_manifest(tmp_path, fixtures_dir, capsys):
    out = tmp_path / "o"
    assert main(["parse", "--in", str(fixtures_dir / "parser_20.tsv"), "--out", str(out)]) == 0
    assert "accepted 17, rejected 3" in capsys.readouterr().out
    assert len(read_records_jsonl(out / "records.jsonl")) == 17
    report = json.loads((out / "parse_report.json").read_text())
    assert report["records_rejected"] == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "parse" and manifest["seed"] == 0
    assert manifest["outputs"]["records.jsonl"]["rows"] == 17
    assert len(manifest["inputs"][0]["sha256"]) == 64


def test_parse_backfile_schema(tmp_path):
    lines = [synth.to_line(synth.event_fields(i, date(2013, 6, 1), np.random.default_rng(i), False),
                           "57col") for i in range(1, 4)]
    path = write_tsv(tmp_path / "b.tsv", lines)
    assert main(["parse", "--in", str(path), "--schema", "57col", "--out", str(tmp_path / "o")]) == 0
    assert len(read_records_jsonl(tmp_path / "o" / "records.jsonl")) == 3


def test_featurize_matches_hand_counts(tmp_path):
    lines = [
        make_line(event_id=1, Actor1CountryCode="SGP"),
        make_line(event_id=2, Actor1CountryCode="SGP"),
        make_line(event_id=3, day=date(2013, 6, 2), SQLDATE="20130602", Actor1CountryCode="MYS"),
        make_line(event_id=4, day=date(2013, 6, 2), SQLDATE="20130602", Actor1CountryCode=""),
    ]
    path = write_tsv(tmp_path / "f.tsv", lines)
    out = tmp_path / "o"
    assert main(["featurize", "--in", str(path), "--nominal", "Actor1CountryCode", "--numeric", "",
                 "--out", str(out)]) == 0
    text = (out / "features.csv").read_text().splitlines()
    assert text[1:] == ["2013-06-01,0,0,2", "2013-06-02,1,1,0"]
    assert text[0].split(",")[1:] == ["Actor1CountryCode__MISSING", "Actor1CountryCode__MYS",
                                      "Actor1CountryCode__SGP"]


def test_bubble_criteria_path(tmp_path, mini):
    out = tmp_path / "o"
    rc = main(["analytics", "bubble", "--in", str(mini / "events.tsv.gz"), "--quadclass", "4", "--root-only",
               "--out", str(out), "--json"])
    assert rc == 0
    (csv_path,) = out.glob("bubble_*.csv")
    rows = read_csv(csv_path)
    records = [r for r in parse_file(mini / "events.tsv.gz")[0] if r.quad_class == 4 and r.is_root_event]
    assert sum(int(r["count_goldstein"]) + int(r["n_missing_goldstein"]) for r in rows) == len(records)
    assert (out / csv_path.name.replace(".csv", ".json")).exists()


def test_exit_codes(tmp_path, mini, capsys):
    with pytest.raises(SystemExit) as info:
        main(["explode"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["parse", "--in", "x", "--bogus"])
    assert info.value.code == 2
    assert main(["parse", "--in", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.tsv"
    bad.write_text(make_line() + "\n")
    assert main(["featurize", "--in", str(bad), "--nominal", "NoSuchField", "--out", str(tmp_path / "o")]) == 1
    assert "NoSuchField" in capsys.readouterr().err
    assert main(["textmine", "links", "--corpus", str(mini / "corpus.jsonl"), "--out", str(tmp_path / "o")]) == 2


def test_config_merge_and_override(tmp_path, mini):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bins": 3, "bin_method": "freq", "nominal": "QuadClass", "numeric": "AvgTone"}))
    out = tmp_path / "o"
    assert main(["featurize", "--in", str(mini / "events.tsv.gz"), "--config", str(cfg), "--bins", "2",
                 "--out", str(out)]) == 0
    header = (out / "features.csv").read_text().splitlines()[0].split(",")
    assert [h for h in header if h.startswith("AvgTone")] == ["AvgTone__MISSING", "AvgTone__bin1", "AvgTone__bin2"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["bins"] == 2 and manifest["config"]["bin_method"] == "freq"
    cfg.write_text(json.dumps({"colour": "blue"}))
    assert main(["featurize", "--in", str(mini / "events.tsv.gz"), "--config", str(cfg), "--out", str(out)]) == 2


def test_textmine_links_and_topics(tmp_path, mini, capsys):
    out = tmp_path / "o"
    assert main(["textmine", "topics", "--corpus", str(mini / "corpus.jsonl"), "--k", "3", "--out", str(out)]) == 0
    rows = read_csv(out / "topics_k3.csv")
    assert [r["topic_id"] for r in rows] == ["1", "2", "3"]
    term = rows[0]["top_terms"].split(",")[0]
    assert main(["textmine", "links", "--corpus", str(mini / "corpus.jsonl"), "--term", term, "--top", "4",
                 "--out", str(out)]) == 0
    links = read_csv(out / "links.csv")
    assert 0 < len(links) <= 4 and all(l["source"] == term for l in links)
    assert main(["textmine", "links", "--corpus", str(mini / "corpus.jsonl"), "--term", "zzzz",
                 "--out", str(out)]) == 1
    assert "zzzz" in capsys.readouterr().err


def test_predict_chain(tmp_path, mini):
    out = tmp_path / "o"
    ev = str(mini / "events.tsv.gz")
    assert main(["featurize", "--in", ev, "--out", str(out)]) == 0
    assert main(["predict", "build", "--features", str(out / "features.csv"), "--market", str(mini / "market.csv"),
                 "--out", str(out)]) == 0
    assert main(["predict", "train", "--in", str(out / "training.csv"), "--max-depth", "3", "--out", str(out)]) == 0
    model = json.loads((out / "model.json").read_text())
    assert model["hyperparams"]["max_depth"] == 3
    assert main(["predict", "eval", "--in", str(out / "training.csv"), "--model", str(out / "model.json"),
                 "--out", str(out)]) == 0
    (metrics,) = read_csv(out / "metrics.csv")
    assert float(metrics["rmse"]) >= 0 and int(metrics["n_rows"]) > 0


def test_failed_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "x.csv"
    target.write_text("old\n")

    def rows():
        yield ["1"]
        raise RuntimeError("disk gone")

    with pytest.raises(RuntimeError):
        _io.write_csv(target, ["a"], rows())
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


def test_mini_fixture_regenerates_identically(tmp_path, mini):
    assert main(["synth", "--out", str(tmp_path), "--seed", "0"]) == 0
    for name in ("events.tsv.gz", "market.csv", "key_events.csv", "corpus.jsonl"):
        assert (tmp_path / name).read_bytes() == (mini / name).read_bytes(), name
