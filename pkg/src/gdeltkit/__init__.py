"""GDELT event parsing, per-day feature rollups, aggregation views, text mining
and next-day index prediction."""
from __future__ import annotations

from .featurize import FeatureSpec, FeatureTable, NumericVar, derive_features
from .gdelt_parser import EventRecord, GeoRef, ParseReport, parse_file, parse_line
from .ingest import ArticleDoc, KeyEvent, MarketBar
from .predict import TrainingTable, TreeModel, build_training_table, train_tree

__version__ = "0.1.0"

__all__ = [
    "ArticleDoc",
    "EventRecord",
    "FeatureSpec",
    "FeatureTable",
    "GeoRef",
    "KeyEvent",
    "MarketBar",
    "NumericVar",
    "ParseReport",
    "TrainingTable",
    "TreeModel",
    "build_training_table",
    "derive_features",
    "parse_file",
    "parse_line",
    "train_tree",
]
