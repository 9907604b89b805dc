"""Polyp segmentation workbench: five encoder-decoder runs, data prep and Table-style reporting."""

from polypseg.errors import (
    ConfigError,
    DomainError,
    LoadError,
    NonFiniteLossError,
    ShapeError,
)
from polypseg.metrics import ConfusionCounts, MetricSet, aggregate, confusion_counts, metric_set

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConfusionCounts",
    "DomainError",
    "LoadError",
    "MetricSet",
    "NonFiniteLossError",
    "ShapeError",
    "aggregate",
    "confusion_counts",
    "metric_set",
]
