"""Scoring a model over a test set and rendering Table-1 style reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import torch

from polypseg import metrics
from polypseg.datapipe import ImageSample
from polypseg.errors import DomainError
from polypseg.metrics import METRIC_NAMES, MetricSet

HEADER = ("Run ID", "Jaccard", "DSC", "Recall", "Precision", "Accuracy", "F2")
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class RunReport:
    run_id: str
    per_image: Mapping[str, MetricSet]
    aggregate: MetricSet
    threshold: float
    n_images: int

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "threshold": self.threshold,
            "n_images": self.n_images,
            "per_image": {k: m.as_dict() for k, m in self.per_image.items()},
            "aggregate": self.aggregate.as_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        if not isinstance(d, dict):
            raise ValueError("a run report must be a JSON object")
        per_image = {k: MetricSet.from_dict(v) for k, v in d.get("per_image", {}).items()}
        return cls(
            run_id=str(d["run_id"]),
            per_image=per_image,
            aggregate=MetricSet.from_dict(d["aggregate"]),
            threshold=float(d["threshold"]),
            n_images=int(d["n_images"]),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _main_logits(out) -> torch.Tensor:
    return out.main if hasattr(out, "main") else out


@torch.no_grad()
def evaluate(
    model: Callable,
    test_set: Sequence[ImageSample],
    threshold: float = DEFAULT_THRESHOLD,
    run_id: str = "run",
    batch_size: int = 4,
) -> RunReport:
    """Threshold ``sigmoid(main logits)`` per image and score against each mask.

    ``model`` is any callable mapping an N x C x H x W batch to a ModelOutput
    (or a bare logits tensor).
    """
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must be in (0,1)")
    if not test_set:
        raise DomainError("test set is empty")
    if hasattr(model, "eval"):
        model.eval()
    dtype = next(model.parameters()).dtype if hasattr(model, "parameters") else torch.float32
    samples = sorted(test_set, key=lambda s: s.id)
    per_image: dict[str, MetricSet] = {}
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        x = torch.from_numpy(np.stack([s.image for s in chunk])).to(dtype)
        probs = torch.sigmoid(_main_logits(model(x)))
        pred = (probs > threshold).numpy()[:, 0]
        for p, s in zip(pred, chunk):
            per_image[s.id] = metrics.score(p, s.mask)
    return RunReport(
        run_id=run_id,
        per_image=per_image,
        aggregate=metrics.aggregate(per_image.values()),
        threshold=threshold,
        n_images=len(per_image),
    )


def round3(value: float) -> str:
    """Three decimals, halves rounded away from zero (0.1235 -> 0.124)."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def table_rows(reports: Sequence[RunReport]) -> list[list[str]]:
    return [[r.run_id, *(round3(getattr(r.aggregate, n)) for n in METRIC_NAMES)] for r in reports]


def format_table(reports: Sequence[RunReport], format: str = "csv") -> str:
    if not reports:
        raise DomainError("no reports to format")
    rows = table_rows(reports)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HEADER)
        writer.writerows(rows)
        return buf.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(HEADER) + " |", "|" + "|".join(["---"] + ["---:"] * 6) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise DomainError(f"unknown table format {format!r}; use csv or markdown")
