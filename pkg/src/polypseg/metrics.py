"""Binary segmentation metrics: Jaccard, DSC, recall, precision, accuracy and F2.

Counts are exact integers; ratios are Python floats (IEEE double).
Aggregation is the unweighted mean over images (macro average).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from polypseg.errors import DomainError, ShapeError

METRIC_NAMES = ("jaccard", "dsc", "recall", "precision", "accuracy", "f2")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if int(v) != v or v < 0:
                raise DomainError(f"{f.name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, f.name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricSet:
    jaccard: float
    dsc: float
    recall: float
    precision: float
    accuracy: float
    f2: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} outside [0, 1]")
            object.__setattr__(self, name, v)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in METRIC_NAMES)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSet":
        missing = set(METRIC_NAMES) - set(d)
        if missing:
            raise DomainError(f"metric record missing keys: {sorted(missing)}")
        return cls(**{n: float(d[n]) for n in METRIC_NAMES})


def _as_binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask.detach().cpu().numpy() if hasattr(mask, "detach") else mask)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        bad = np.unique(arr[~np.isin(arr, (0, 1))])[:5]
        raise DomainError(f"{name} must be binary; found values {bad.tolist()}")
    return arr.astype(bool)


def confusion_counts(pred, truth) -> ConfusionCounts:
    """Pixel tallies of a binary prediction against a binary ground truth."""
    p = _as_binary(pred, "pred")
    t = _as_binary(truth, "truth")
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != truth shape {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=p.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metric_set(counts: ConfusionCounts) -> MetricSet:
    """The six ratios for one confusion record.

    When both masks are empty (tp + fp + fn == 0) every overlap metric is 1.0;
    otherwise a metric whose own denominator vanishes is 0.0.
    """
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    total = counts.total
    if total == 0:
        raise DomainError("cannot score an empty confusion record (total = 0)")
    accuracy = (tp + tn) / total
    if tp + fp + fn == 0:
        return MetricSet(1.0, 1.0, 1.0, 1.0, accuracy, 1.0)
    return MetricSet(
        jaccard=_ratio(tp, tp + fp + fn),
        dsc=_ratio(2 * tp, 2 * tp + fp + fn),
        recall=_ratio(tp, tp + fn),
        precision=_ratio(tp, tp + fp),
        accuracy=accuracy,
        f2=_ratio(5 * tp, 5 * tp + 4 * fn + fp),
    )


def score(pred, truth) -> MetricSet:
    return metric_set(confusion_counts(pred, truth))


def aggregate(per_image: Iterable[MetricSet]) -> MetricSet:
    """Field-wise arithmetic mean of per-image metrics."""
    items: Sequence[MetricSet] = list(per_image)
    if not items:
        raise DomainError("cannot aggregate an empty sequence of metric sets")
    n = len(items)
    means = {name: sum(getattr(m, name) for m in items) / n for name in METRIC_NAMES}
    # rounding in the sum can push a mean of 1.0s a hair past 1
    return MetricSet(**{k: min(1.0, max(0.0, v)) for k, v in means.items()})
