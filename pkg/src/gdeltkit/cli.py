"""Command-line front end: ``gdeltkit <subcommand> [flags]``.

Each run writes its artifacts plus ``manifest.json`` (inputs with checksums,
resolved config and its hash, row counts, timings) under ``--out``.  Exit
status is 0 on success, 1 for data errors and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Optional, Sequence

from . import analytics, featurize, gdelt_parser, ingest, predict, synth, textmine
from ._io import atomic_open, dump_json, sha256_file, sha256_text, write_json
from .gdelt_parser import EventRecord, ParseReport

logger = logging.getLogger("gdeltkit")

VIEWS = ("monthly", "bubble", "geomap", "hierarchy", "network")
DEFAULT_NOMINAL = (
    "EventRootCode",
    "QuadClass",
    "ActionGeo_FullName",
    "Actor1CountryCode",
    "Actor2CountryCode",
    "mainURL",
)
DEFAULT_NUMERIC = ("GoldsteinScale", "AvgTone", "NumMentions")

# Resolved when neither a flag nor the config file sets a value.
DEFAULTS: dict[str, Any] = {
    "out": "out",
    "schema": "58col",
    "workers": 1,
    "country": None,
    "events": None,
    "before": 7,
    "after": 14,
    "nominal": ",".join(DEFAULT_NOMINAL),
    "numeric": ",".join(DEFAULT_NUMERIC),
    "bins": 5,
    "bin_method": "width",
    "agg": "count",
    "resolution": "day",
    "time_var": "sql_date",
    "max_cardinality": featurize.DEFAULT_MAX_CARDINALITY,
    "quadclass": None,
    "root_only": False,
    "hosts": None,
    "window": None,
    "event_flag": None,
    "group_quadclass": False,
    "zero_fill": False,
    "cell": 0.01,
    "exclude_centroid": False,
    "country_name": None,
    "json": False,
    "lag": "trading",
    "target_diff": False,
    "trading_days_only": False,
    "max_depth": 6,
    "min_leaf": 5,
    "min_gain": 0.0,
    "seed": 0,
    "k": 25,
    "n_iter": 200,
    "term": None,
    "top": 9,
    "stem": False,
    "min_df": 1,
    "corpus": None,
    "market": None,
    "features": None,
    "model": None,
}


class UsageError(Exception):
    pass


# --- argument parsing --------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--config", help="JSON file of option values; flags override it")
    p.add_argument("--seed", type=int, help="random seed recorded in the manifest (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", default=None)


def _events_in(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--in", dest="inputs", nargs="+", required=required, metavar="PATH",
                   help="GDELT TSV files (.gz allowed) or a records .jsonl file")
    p.add_argument("--schema", choices=sorted(gdelt_parser.SCHEMAS) + sorted(gdelt_parser.SCHEMA_ALIASES),
                   help="column layout of TSV inputs (default 58col, with SOURCEURL)")
    p.add_argument("--workers", type=int, help="parallel parse processes")


def _feature_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nominal", help="comma-separated nominal fields")
    p.add_argument("--numeric", help="comma-separated numeric fields")
    p.add_argument("--bins", type=int, help="bins per numeric field (default 5)")
    p.add_argument("--bin-method", choices=("width", "freq"))
    p.add_argument("--agg", choices=featurize.AGGREGATORS)
    p.add_argument("--resolution", choices=featurize.RESOLUTIONS)
    p.add_argument("--time-var", help="temporal field (default sql_date)")
    p.add_argument("--max-cardinality", type=int)


def _filter_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--quadclass", help="comma-separated QuadClass values, e.g. 4")
    p.add_argument("--root-only", action="store_true", default=None, help="IsRootEvent = 1 only")
    p.add_argument("--hosts", help="comma-separated source hosts, or 'regional'")
    p.add_argument("--window", help="date range START:END (ISO dates, either side may be empty)")
    p.add_argument("--event-flag", type=int, choices=(0, 1), help="keep months with this key-event flag")


def _join_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--country", help="ActionGeo country code to keep (e.g. SN)")
    p.add_argument("--events", help="key-event CSV (date,label,source) to flag records")
    p.add_argument("--before", type=int, help="days before a key event that are flagged (default 7)")
    p.add_argument("--after", type=int, help="days after a key event that are flagged (default 14)")


def _view_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--group-quadclass", action="store_true", default=None)
    p.add_argument("--zero-fill", action="store_true", default=None, help="emit empty months too")
    p.add_argument("--cell", type=float, help="geomap cell size in degrees (default 0.01)")
    p.add_argument("--exclude-centroid", action="store_true", default=None,
                   help="drop records located at the bare country name")
    p.add_argument("--country-name", help="full name used by --exclude-centroid")
    p.add_argument("--json", action="store_true", default=None, help="also write JSON views")


def _tree_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-depth", type=int)
    p.add_argument("--min-leaf", type=int)
    p.add_argument("--min-gain", type=float)


def _lag_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--market", help="Yahoo-style price CSV")
    p.add_argument("--lag", choices=("trading", "calendar"))
    p.add_argument("--target-diff", action="store_true", default=None, help="target next-day return")
    p.add_argument("--trading-days-only", action="store_true", default=None,
                   help="only use feature rows dated on trading days")


def _text_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="corpus directory, manifest CSV or .jsonl")
    p.add_argument("--stem", action="store_true", default=None, help="strip plural endings")
    p.add_argument("--min-df", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdeltkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("parse", help="parse GDELT TSV into records.jsonl and a parse report")
    _common(p)
    _events_in(p)

    p = sub.add_parser("filter", help="country filter and key-event flags")
    _common(p)
    _events_in(p)
    _join_opts(p)

    p = sub.add_parser("featurize", help="per-day derived feature table")
    _common(p)
    _events_in(p)
    _feature_opts(p)

    p = sub.add_parser("analytics", help="aggregation views")
    p.add_argument("view", choices=VIEWS)
    _common(p)
    _events_in(p)
    _join_opts(p)
    _filter_opts(p)
    _view_opts(p)

    p = sub.add_parser("textmine", help="concept links and topics")
    p.add_argument("task", choices=("links", "topics"))
    _common(p)
    _text_opts(p)
    p.add_argument("--in", dest="inputs", nargs="+", metavar="PATH", help="alias for --corpus")
    p.add_argument("--term", nargs="+", help="term(s) to expand, in chain order")
    p.add_argument("--top", type=int, help="neighbours per term (default 9)")
    p.add_argument("--k", type=int, help="number of topics (default 25)")
    p.add_argument("--n-iter", type=int, help="factorisation iteration budget (default 200)")

    p = sub.add_parser("predict", help="training table, tree training and evaluation")
    p.add_argument("task", choices=("build", "train", "eval"))
    _common(p)
    p.add_argument("--in", dest="inputs", nargs="+", metavar="PATH",
                   help="features CSV (build) or training CSV (train, eval)")
    p.add_argument("--features", help="features CSV for build")
    p.add_argument("--model", help="model JSON for eval")
    p.add_argument("--window", help="date range START:END")
    _lag_opts(p)
    _tree_opts(p)

    p = sub.add_parser("pipeline", help="parse, filter, featurize, train and emit every view")
    _common(p)
    _events_in(p)
    _join_opts(p)
    _feature_opts(p)
    _filter_opts(p)
    _view_opts(p)
    _lag_opts(p)
    _tree_opts(p)
    _text_opts(p)
    p.add_argument("--k", type=int, help="topics when --corpus is given (default 25)")
    p.add_argument("--n-iter", type=int)

    p = sub.add_parser("synth", help="write the synthetic mini fixture")
    _common(p)
    p.add_argument("--n-events", type=int, default=synth.MINI_EVENTS)
    p.add_argument("--days", type=int, default=synth.MINI_DAYS)
    return parser


# --- option resolution -------------------------------------------------------

_NOT_CONFIG = {"command", "view", "task", "config", "verbose", "n_events", "days"}


def resolve_options(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, the ``--config`` file and explicit flags (flags win)."""
    opts = dict(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(cfg) - set(DEFAULTS) - {"inputs"})
        if unknown:
            raise UsageError(f"{args.config}: unknown option(s) {unknown}")
        opts.update(cfg)
    for key, value in vars(args).items():
        if key not in _NOT_CONFIG and value is not None:
            opts[key] = value
    return opts


def _csv_list(value: Optional[str]) -> list[str]:
    if not value:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def parse_window(text: Optional[str]) -> Optional[tuple[Optional[date], Optional[date]]]:
    if not text:
        return None
    if ":" not in text:
        raise UsageError(f"--window expects START:END, got {text!r}")
    a, b = text.split(":", 1)
    try:
        start = date.fromisoformat(a) if a else None
        end = date.fromisoformat(b) if b else None
    except ValueError as exc:
        raise UsageError(f"--window: {exc}") from None
    if start and end and start > end:
        raise UsageError(f"--window start {start} is after end {end}")
    return start, end


def feature_spec(opts: dict) -> featurize.FeatureSpec:
    numeric = [featurize.NumericVar(n, opts["bin_method"], int(opts["bins"])) for n in _csv_list(opts["numeric"])]
    return featurize.FeatureSpec(
        nominal_vars=tuple(_csv_list(opts["nominal"])),
        numeric_vars=tuple(numeric),
        time_variable=opts["time_var"],
        resolution=opts["resolution"],
        aggregator=opts["agg"],
        max_cardinality=int(opts["max_cardinality"]),
    )


def filter_criteria(opts: dict) -> analytics.FilterCriteria:
    hosts = _csv_list(opts["hosts"])
    if hosts == ["regional"]:
        hosts = list(analytics.REGIONAL_HOSTS)
    try:
        quads = frozenset(int(q) for q in _csv_list(opts["quadclass"]))
    except ValueError:
        raise UsageError(f"--quadclass expects integers, got {opts['quadclass']!r}") from None
    window = parse_window(opts["window"])
    return analytics.FilterCriteria(
        quad_classes=quads,
        is_root_event=True if opts["root_only"] else None,
        hosts=frozenset(hosts),
        start=window[0] if window else None,
        end=window[1] if window else None,
        event_flag=opts["event_flag"],
    )


# --- run bookkeeping ---------------------------------------------------------


@dataclass
class Run:
    command: str
    opts: dict
    out: Path
    inputs: list[Path] = field(default_factory=list)
    outputs: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    _t0: float = 0.0

    def stage(self, name: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = round(time.perf_counter() - self.t, 6)

        return _Timer()

    def use(self, *paths) -> None:
        for p in paths:
            if p is None:
                continue
            p = Path(p)
            if not p.exists():
                raise FileNotFoundError(f"input not found: {p}")
            if p not in self.inputs:
                self.inputs.append(p)

    def wrote(self, name: str, rows: int) -> None:
        self.outputs[name] = rows

    def config(self) -> dict:
        cfg = {k: v for k, v in sorted(self.opts.items()) if k not in ("out",)}
        cfg["command"] = self.command
        return cfg

    def manifest(self) -> dict:
        cfg = self.config()
        inputs = []
        for p in self.inputs:
            entry = {"path": str(p)}
            if p.is_file():
                entry["sha256"] = sha256_file(p)
            inputs.append(entry)
        outputs = {}
        for name, rows in sorted(self.outputs.items()):
            outputs[name] = {"rows": rows, "sha256": sha256_file(self.out / name)}
        return {
            "command": self.command,
            "config": cfg,
            "config_hash": sha256_text(dump_json(cfg)),
            "seed": self.opts["seed"],
            "inputs": inputs,
            "outputs": outputs,
            "timings": dict(sorted(self.timings.items())),
            **self.extra,
        }

    def finish(self) -> None:
        self.timings["total"] = round(time.perf_counter() - self._t0, 6)
        write_json(self.out / "manifest.json", self.manifest())


def load_events(run: Run, paths: Sequence[str]) -> tuple[list[EventRecord], Optional[ParseReport]]:
    """Records from TSV files (parsed) or a records .jsonl file."""
    run.use(*paths)
    records: list[EventRecord] = []
    report: Optional[ParseReport] = None
    for p in map(Path, paths):
        if p.suffix == ".jsonl":
            records.extend(gdelt_parser.read_records_jsonl(p))
            continue
        recs, rep = gdelt_parser.parse_file(p, run.opts["schema"], workers=int(run.opts["workers"]))
        records.extend(recs)
        if report is None:
            report = rep
        else:
            report.merge(rep)
    return records, report


def write_records_file(path: Path, records: Sequence[EventRecord]) -> int:
    with atomic_open(path, "w", encoding="utf-8") as fh:
        return gdelt_parser.write_records(records, fh)


def _write_report(run: Run, report: ParseReport) -> None:
    with atomic_open(run.out / "parse_report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    run.wrote("parse_report.json", report.lines_read)


# --- subcommands -------------------------------------------------------------


def _filter_and_flag(run: Run, records: list[EventRecord]) -> list[EventRecord]:
    opts = run.opts
    n_in = len(records)
    if opts["country"]:
        records = list(gdelt_parser.filter_country(records, opts["country"]))
    flagged = 0
    if opts["events"]:
        run.use(opts["events"])
        events = ingest.load_key_events(opts["events"])
        records = list(ingest.join_window(records, events, int(opts["before"]), int(opts["after"])))
        flagged = sum(r.event_flag for r in records)
    run.extra["filter"] = {"records_in": n_in, "records_kept": len(records), "records_flagged": flagged}
    return records


def cmd_parse(run: Run) -> None:
    with run.stage("parse"):
        records, report = load_events(run, run.opts["inputs"])
    run.wrote("records.jsonl", write_records_file(run.out / "records.jsonl", records))
    if report is not None:
        _write_report(run, report)
        print(
            f"accepted {report.records_accepted}, rejected {report.records_rejected}, "
            f"skipped {report.skipped_blank} of {report.lines_read} lines"
        )


def cmd_filter(run: Run) -> None:
    with run.stage("load"):
        records, _ = load_events(run, run.opts["inputs"])
    with run.stage("filter"):
        records = _filter_and_flag(run, records)
    run.wrote("records.jsonl", write_records_file(run.out / "records.jsonl", records))
    print(f"kept {len(records)} records")


def _featurize(run: Run, records: list[EventRecord]) -> featurize.FeatureTable:
    spec = feature_spec(run.opts)
    with run.stage("featurize"):
        table = featurize.derive_features(records, spec)
    table.to_csv(run.out / "features.csv")
    run.wrote("features.csv", table.n_rows)
    table.to_json(run.out / "features.json")
    run.wrote("features.json", table.n_rows)
    return table


def cmd_featurize(run: Run) -> None:
    with run.stage("load"):
        records, _ = load_events(run, run.opts["inputs"])
    table = _featurize(run, records)
    print(f"{table.n_rows} rows x {len(table.columns)} derived columns")


def _write_view(run: Run, view: analytics.AggView, span: str) -> None:
    name = f"{view.name}_{span}.csv"
    run.wrote(name, view.to_csv(run.out / name))
    if run.opts["json"]:
        jname = f"{view.name}_{span}.json"
        view.to_json(run.out / jname)
        run.wrote(jname, len(view.rows))
    if view.tallies:
        run.extra.setdefault("tallies", {})[view.name] = dict(sorted(view.tallies.items()))


def _views(run: Run, records: list[EventRecord], which: Sequence[str]) -> None:
    opts = run.opts
    span = analytics.date_span(records)
    for v in which:
        with run.stage(f"view_{v}"):
            if v == "monthly":
                view = analytics.monthly_goldstein(records, bool(opts["group_quadclass"]), bool(opts["zero_fill"]))
            elif v == "bubble":
                view = analytics.bubble_series(records, filter_criteria(opts))
            elif v == "geomap":
                name = opts["country_name"]
                view = analytics.geomap_bins(records, float(opts["cell"]), bool(opts["exclude_centroid"]), name)
            elif v == "hierarchy":
                tree = analytics.hierarchy_rollup(records)
                view = analytics.hierarchy_view(tree)
                _write_view(run, analytics.word_cloud(tree), span)
            else:
                view = analytics.actor_network(records)
        _write_view(run, view, span)


def cmd_analytics(run: Run, view: str) -> None:
    with run.stage("load"):
        records, _ = load_events(run, run.opts["inputs"])
    if run.opts["country"] or run.opts["events"]:
        records = _filter_and_flag(run, records)
    _views(run, records, [view])


def _corpus(run: Run):
    path = run.opts["corpus"] or (run.opts.get("inputs") or [None])[0]
    if not path:
        raise UsageError("a corpus is required (--corpus PATH)")
    run.use(path)
    corpus = ingest.load_corpus(path)
    matrix = textmine.build_matrix(corpus, stem=bool(run.opts["stem"]), min_df=int(run.opts["min_df"]))
    run.extra["corpus"] = {"docs": len(corpus), "skipped_empty": corpus.skipped_empty, "terms": len(matrix.terms)}
    return matrix


def _topics(run: Run, matrix) -> textmine.TopicModel:
    k = int(run.opts["k"])
    with run.stage("topics"):
        model = textmine.extract_topics(matrix, k, seed=int(run.opts["seed"]), n_iter=int(run.opts["n_iter"]))
    run.wrote(f"topics_k{k}.csv", model.to_csv(run.out / f"topics_k{k}.csv"))
    model.to_json(run.out / f"topics_k{k}.json")
    run.wrote(f"topics_k{k}.json", len(model))
    return model


def cmd_textmine(run: Run, task: str) -> None:
    with run.stage("matrix"):
        matrix = _corpus(run)
    if task == "links":
        terms = run.opts["term"]
        if not terms:
            raise UsageError("textmine links needs --term")
        with run.stage("links"):
            links = textmine.concept_graph(matrix, _csv_list(terms), int(run.opts["top"]))
        run.wrote("links.csv", textmine.write_links(run.out / "links.csv", links))
        for link in links:
            print(f"{link.source} -> {link.target}\t{link.cooccurrence}\t{link.strength:.4f}")
    else:
        model = _topics(run, matrix)
        for t in model:
            print(f"{t.topic_id}\t{','.join(t.top_terms)}\t{t.n_terms}\t{t.n_docs}")


def _first_input(run: Run, *keys: str) -> str:
    for key in keys:
        value = run.opts.get(key)
        if value:
            return value[0] if isinstance(value, list) else value
    raise UsageError(f"missing input: --{keys[0].replace('_', '-')}")


def _build_table(run: Run, table: featurize.FeatureTable) -> predict.TrainingTable:
    if not run.opts["market"]:
        raise UsageError("--market is required")
    run.use(run.opts["market"])
    with run.stage("build"):
        market = ingest.load_market(run.opts["market"])
        training = predict.build_training_table(
            table, market, run.opts["lag"], bool(run.opts["target_diff"]), bool(run.opts["trading_days_only"])
        )
    run.wrote("training.csv", training.to_csv(run.out / "training.csv"))
    run.extra["training"] = {"rows": len(training), "dropped": training.dropped, "lag_policy": training.lag_policy}
    return training


def _train(run: Run, training: predict.TrainingTable) -> predict.TreeModel:
    window = parse_window(run.opts["window"])
    with run.stage("train"):
        model = predict.train_tree(
            training, int(run.opts["max_depth"]), int(run.opts["min_leaf"]), float(run.opts["min_gain"]), window
        )
    model.to_json(run.out / "model.json")
    run.wrote("model.json", len(model.nodes()))
    return model


def _evaluate(run: Run, model: predict.TreeModel, training: predict.TrainingTable) -> predict.Metrics:
    with run.stage("eval"):
        metrics = predict.evaluate(model, training, parse_window(run.opts["window"]))
    run.wrote("metrics.csv", metrics.to_csv(run.out / "metrics.csv"))
    return metrics


def cmd_predict(run: Run, task: str) -> None:
    if task == "build":
        path = _first_input(run, "features", "inputs")
        run.use(path)
        training = _build_table(run, featurize.FeatureTable.from_csv(path))
        print(f"{len(training)} rows, {training.dropped} dropped")
        return
    path = _first_input(run, "inputs")
    run.use(path)
    training = predict.TrainingTable.from_csv(path)
    if task == "train":
        model = _train(run, training)
        for name, imp in model.top_features(3):
            print(f"{name}\t{imp:.6g}")
        return
    model_path = _first_input(run, "model")
    run.use(model_path)
    print(predict.fmt_metrics(_evaluate(run, predict.TreeModel.from_json(model_path), training)))


def cmd_pipeline(run: Run) -> None:
    with run.stage("parse"):
        records, report = load_events(run, run.opts["inputs"])
    if report is not None:
        _write_report(run, report)
    with run.stage("filter"):
        records = _filter_and_flag(run, records)
    run.wrote("records.jsonl", write_records_file(run.out / "records.jsonl", records))
    table = _featurize(run, records)
    if run.opts["market"]:
        training = _build_table(run, table)
        model = _train(run, training)
        _evaluate(run, model, training)
        run.extra["top_features"] = [[n, v] for n, v in model.top_features(3)]
    _views(run, records, VIEWS)
    if run.opts["corpus"]:
        with run.stage("matrix"):
            matrix = _corpus(run)
        _topics(run, matrix)
    print(f"{len(records)} records, {table.n_rows} feature rows; outputs in {run.out}")


def cmd_synth(run: Run, n_events: int, days: int) -> None:
    fx = synth.write_mini_fixture(run.out, seed=int(run.opts["seed"]), n_events=n_events, n_days=days)
    for p in (fx.events, fx.market, fx.key_events, fx.corpus):
        print(p)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        opts = resolve_options(args)
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, opts, out, _t0=time.perf_counter())
        if args.command == "parse":
            cmd_parse(run)
        elif args.command == "filter":
            cmd_filter(run)
        elif args.command == "featurize":
            cmd_featurize(run)
        elif args.command == "analytics":
            cmd_analytics(run, args.view)
        elif args.command == "textmine":
            cmd_textmine(run, args.task)
        elif args.command == "predict":
            cmd_predict(run, args.task)
        elif args.command == "pipeline":
            cmd_pipeline(run)
        else:
            cmd_synth(run, args.n_events, args.days)
            return 0
        run.finish()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gdeltkit: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, textmine.UnknownTermError):
            msg = str(exc)
        print(f"gdeltkit: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
