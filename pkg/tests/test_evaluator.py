import csv
import io
import json
import math

import numpy as np
import pytest
import torch

from oracles import pixel_loop_metrics
from polypseg import datapipe, metrics
from polypseg.errors import DomainError
from polypseg.evaluator import HEADER, RunReport, evaluate, format_table, round3
from polypseg.metrics import METRIC_NAMES, MetricSet
from polypseg.models import ModelConfig, ModelOutput, build_model

TABLE1 = [
    ("Run 1", 0.323, 0.434, 0.553, 0.408, 0.862, 0.483),
    ("Run 2", 0.290, 0.411, 0.765, 0.330, 0.739, 0.525),
    ("Run 3", 0.406, 0.515, 0.507, 0.757, 0.901, 0.501),
    ("Run 4", 0.294, 0.419, 0.764, 0.341, 0.755, 0.535),
    ("Run5", 0.766, 0.841, 0.894, 0.844, 0.946, 0.857),
]


def report_with(run_id, values):
    agg = MetricSet(*values)
    return RunReport(run_id, {"x": agg}, agg, 0.5, 1)


def mask_in_red(samples):
    """Samples whose red channel equals the mask, so a model can read the truth off the image."""
    out = []
    for s in samples:
        img = s.image.copy()
        img[0] = s.mask
        out.append(datapipe.ImageSample(s.id, img, s.mask))
    return out


def oracle_model(x):
    return ModelOutput(torch.where(x[:, :1] > 0.5, 100.0, -100.0))


class TestEvaluate:
    def test_perfect_model(self):
        samples = mask_in_red(datapipe.blob_samples(4, 32, seed=0))
        report = evaluate(oracle_model, samples, 0.5, "oracle")
        assert report.n_images == 4
        assert all(m.values() == (1.0,) * 6 for m in report.per_image.values())
        assert report.aggregate.values() == (1.0,) * 6

    def test_constant_negative_model(self):
        samples = datapipe.blob_samples(3, 32, seed=1)
        report = evaluate(lambda x: torch.full((x.shape[0], 1, 32, 32), -100.0), samples)
        for s in samples:
            m = report.per_image[s.id]
            assert m.recall == 0.0 and m.precision == 0.0
            assert m.accuracy == pytest.approx(1 - s.mask.mean())

    def test_matches_pixel_loop_pipeline(self):
        samples = datapipe.blob_samples(5, 32, seed=2)
        model = build_model(ModelConfig(arch="unet", base_width=4, depth=2, seed=11))
        report = evaluate(model, samples, 0.5, "rand")

        per = []
        for s in samples:
            with torch.no_grad():
                z = model(torch.from_numpy(s.image)[None]).main[0, 0].double().numpy()
            pred = [[1 if 1.0 / (1.0 + math.exp(-v)) > 0.5 else 0 for v in row] for row in z]
            per.append(pixel_loop_metrics(pred, s.mask))
        for name in METRIC_NAMES:
            ref = math.fsum(p[name] for p in per) / len(per)
            assert getattr(report.aggregate, name) == pytest.approx(ref, abs=1e-9)
        for m in report.per_image.values():
            assert m.dsc == pytest.approx(2 * m.jaccard / (1 + m.jaccard), abs=1e-12)

    def test_order_independent(self):
        samples = datapipe.blob_samples(5, 32, seed=3)
        model = build_model(ModelConfig(arch="unet", base_width=4, depth=2, seed=1))
        a = evaluate(model, samples, run_id="r")
        b = evaluate(model, samples[::-1], run_id="r")
        assert a.to_json() == b.to_json()
        assert list(a.per_image) == sorted(s.id for s in samples)

    def test_threshold_monotone(self):
        samples = datapipe.blob_samples(4, 32, seed=4)
        model = build_model(ModelConfig(arch="resunet", base_width=4, depth=2, seed=5))
        prev = None
        for t in (0.1, 0.3, 0.5, 0.7, 0.9):
            r = evaluate(model, samples, t)
            with torch.no_grad():
                logits = model(torch.from_numpy(np.stack([s.image for s in samples]))).main
            fps = [
                metrics.confusion_counts((torch.sigmoid(z[0]) > t).numpy(), s.mask).fp
                for z, s in zip(logits, samples)
            ]
            if prev:
                for s, fp in zip(samples, fps):
                    assert r.per_image[s.id].recall <= prev[0].per_image[s.id].recall
                assert all(a <= b for a, b in zip(fps, prev[1]))
            prev = (r, fps)

    @pytest.mark.parametrize("t", [0.0, 1.0, 1.5])
    def test_threshold_domain(self, t):
        with pytest.raises(DomainError, match=r"threshold must be in \(0,1\)"):
            evaluate(oracle_model, datapipe.blob_samples(1, 16), t)

    def test_empty(self):
        with pytest.raises(DomainError):
            evaluate(oracle_model, [])

    def test_json_schema_roundtrip(self, tmp_path):
        samples = mask_in_red(datapipe.blob_samples(2, 16, seed=0))
        report = evaluate(oracle_model, samples, 0.5, "r")
        doc = json.loads(report.to_json())
        assert set(doc) == {"run_id", "threshold", "n_images", "per_image", "aggregate"}
        assert tuple(doc["aggregate"]) == METRIC_NAMES
        path = tmp_path / "r.json"
        path.write_text(report.to_json())
        assert RunReport.load(path) == report


class TestFormatTable:
    def test_run5_row(self):
        text = format_table([report_with("Run5", TABLE1[-1][1:])])
        header, row = text.strip().splitlines()
        assert header == "Run ID,Jaccard,DSC,Recall,Precision,Accuracy,F2"
        assert row == "Run5,0.766,0.841,0.894,0.844,0.946,0.857"

    def test_all_ones(self):
        row = format_table([report_with("p", (1.0,) * 6)]).splitlines()[1]
        assert row.split(",")[1:] == ["1.000"] * 6

    def test_half_up(self):
        assert round3(0.12345) == "0.123"
        assert round3(0.1235) == "0.124"
        assert round3(0.0005) == "0.001"
        assert round3(0.0) == "0.000"

    def test_full_table(self):
        text = format_table([report_with(r[0], r[1:]) for r in TABLE1])
        rows = list(csv.reader(io.StringIO(text)))
        assert tuple(rows[0]) == HEADER
        for parsed, ref in zip(rows[1:], TABLE1):
            assert parsed[0] == ref[0]
            assert parsed[1:] == [f"{v:.3f}" for v in ref[1:]]

    def test_csv_lossless_to_rounding(self, rng):
        reports = [report_with(f"r{i}", tuple(rng.random(6))) for i in range(5)]
        rows = list(csv.reader(io.StringIO(format_table(reports))))[1:]
        for rep, row in zip(reports, rows):
            assert row[1:] == [round3(v) for v in rep.aggregate.values()]

    def test_markdown(self):
        text = format_table([report_with("Run5", TABLE1[-1][1:])], "markdown")
        lines = text.strip().splitlines()
        assert lines[0] == "| Run ID | Jaccard | DSC | Recall | Precision | Accuracy | F2 |"
        assert lines[2] == "| Run5 | 0.766 | 0.841 | 0.894 | 0.844 | 0.946 | 0.857 |"

    def test_empty_and_unknown_format(self):
        with pytest.raises(DomainError):
            format_table([])
        with pytest.raises(DomainError):
            format_table([report_with("a", (1.0,) * 6)], "latex")
