import json

import numpy as np
import pytest

from bevground.evalkit import (
    EvalRecord,
    accuracy,
    format_table,
    mean_report,
    read_predictions,
    records_from_files,
    report,
)
from bevground.geometry import Box3D, bev_iou


def record_with_bev_iou(target_iou, attribute="multiple", sample_id="s"):
    """Axis-aligned 2x2 squares offset in x by d = 2(1-t)/(1+t) have IoU t."""
    gt = Box3D(0, 0, 0, 2, 2, 2, 0)
    d = 2.0 * (1.0 - target_iou) / (1.0 + target_iou)
    pred = Box3D(d, 0, 0, 2, 2, 2, 0)
    rec = EvalRecord(sample_id, pred, gt, attribute)
    assert rec.iou("bev") == pytest.approx(target_iou, abs=1e-12)
    return rec


class TestAccuracy:
    def test_perfect_predictions(self):
        gt = Box3D(1, 2, 0, 4, 2, 1.5, 0.3)
        records = [EvalRecord(f"s{i}", gt, gt, "unique") for i in range(5)]
        for thr in (0.25, 0.5, 0.99):
            assert accuracy(records, "bev", thr) == 1.0
            assert accuracy(records, "3d", thr) == 1.0

    def test_hand_fixture_quarter_and_half_thresholds(self):
        records = [record_with_bev_iou(t, sample_id=f"s{i}")
                   for i, t in enumerate((0.1, 0.3, 0.6, 0.9))]
        assert accuracy(records, "bev", 0.25) == pytest.approx(0.75)
        assert accuracy(records, "bev", 0.5) == pytest.approx(0.5)

    def test_threshold_exactly_met_counts(self):
        records = [record_with_bev_iou(0.25)]
        assert accuracy(records, "bev", 0.25) == 1.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        records = [record_with_bev_iou(float(t), sample_id=f"s{i}")
                   for i, t in enumerate(rng.uniform(0.01, 0.99, 40))]
        prev = 1.1
        for thr in np.linspace(0.05, 0.95, 10):
            acc = accuracy(records, "bev", float(thr))
            assert acc <= prev
            prev = acc

    def test_3d_never_exceeds_bev_for_aligned_extents(self):
        records = [record_with_bev_iou(float(t), sample_id=f"s{i}")
                   for i, t in enumerate((0.2, 0.4, 0.6))]
        for thr in (0.25, 0.5):
            assert accuracy(records, "3d", thr) <= accuracy(records, "bev", thr)
            assert accuracy(records, "3d", thr) == accuracy(records, "bev", thr)

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], "bev", 0.25)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            accuracy([record_with_bev_iou(0.5)], "volumetric", 0.25)


class TestReport:
    def _mixed_records(self):
        uniques = [record_with_bev_iou(t, "unique", f"u{i}")
                   for i, t in enumerate((0.1, 0.3))]
        multiples = [record_with_bev_iou(t, "multiple", f"m{i}")
                     for i, t in enumerate((0.6, 0.9, 0.3))]
        return uniques + multiples

    def test_overall_is_count_weighted_subgroup_mean(self):
        records = self._mixed_records()
        table = report(records)
        for kind in ("bev", "3d"):
            for thr in ("0.25", "0.5"):
                row = table["accuracy"][kind][thr]
                n_u, n_m = table["counts"]["unique"], table["counts"]["multiple"]
                expected = (n_u * row["unique"] + n_m * row["multiple"]) / (n_u + n_m)
                assert row["overall"] == pytest.approx(expected, abs=1e-12)

    def test_all_unique_input_marks_multiple_absent(self):
        records = [record_with_bev_iou(0.6, "unique", f"u{i}") for i in range(3)]
        table = report(records)
        row = table["accuracy"]["bev"]["0.25"]
        assert row["multiple"] is None
        assert row["overall"] == row["unique"]

    def test_unique_below_multiple_anomaly_direction(self):
        # Crafted so the intuitively-easier subgroup scores lower, the
        # direction the distance/category bias produces on real data.
        records = [record_with_bev_iou(0.1, "unique", "u0"),
                   record_with_bev_iou(0.15, "unique", "u1"),
                   record_with_bev_iou(0.8, "multiple", "m0"),
                   record_with_bev_iou(0.9, "multiple", "m1"),
                   record_with_bev_iou(0.6, "multiple", "m2")]
        row = report(records)["accuracy"]["bev"]["0.25"]
        assert row["unique"] < row["multiple"]

    def test_text_table_renders_all_rows(self):
        text = format_table(report(self._mixed_records()))
        for token in ("BEV", "3D", "0.25", "0.5", "unique", "multiple", "overall"):
            assert token in text

    def test_mean_report_averages_cells(self):
        t1 = report([record_with_bev_iou(0.6, "multiple", "a")])
        t2 = report([record_with_bev_iou(0.1, "multiple", "a")])
        merged = mean_report([t1, t2])
        assert merged["trials"] == 2
        assert merged["accuracy"]["bev"]["0.25"]["overall"] == pytest.approx(0.5)


class TestPredictionFiles:
    def test_roundtrip_and_join(self, small_corpus, tmp_path):
        _, samples = small_corpus
        path = tmp_path / "pred.jsonl"
        with open(path, "w") as fh:
            for s in samples:
                fh.write(json.dumps({"sample_id": s.sample_id,
                                     "box": s.referred.to_list(),
                                     "confidence": 0.8}) + "\n")
        preds = read_predictions(path)
        assert len(preds) == len(samples)
        records = records_from_files(path, samples)
        assert accuracy(records, "bev", 0.5) == 1.0
        assert accuracy(records, "3d", 0.5) == 1.0

    def test_missing_prediction_is_an_error(self, small_corpus, tmp_path):
        _, samples = small_corpus
        path = tmp_path / "pred.jsonl"
        with open(path, "w") as fh:
            fh.write(json.dumps({"sample_id": samples[0].sample_id,
                                 "box": samples[0].referred.to_list(),
                                 "confidence": 1.0}) + "\n")
        with pytest.raises(ValueError):
            records_from_files(path, samples)
