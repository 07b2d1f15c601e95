import itertools
import json

import numpy as np
import pytest

from handseg.cascade import CascadeModel
from handseg.evaluation import evaluate_batch, timing_stats, write_report_csv, write_report_json
from handseg.metrics import Confusion, confusion, f1_score, scores
from handseg.raster import DimensionMismatchError, LabelMask, Roi
from conftest import blob_pair, near_forest
from oracles import confusion_oracle

# (precision, recall, F1) score rows of the published comparison table, x100
TABLE_ROWS = [
    (38.1, 91.2, 53.7),
    (54.5, 72.7, 62.3),
    (70.0, 68.6, 69.3),
    (68.0, 72.2, 70.1),
    (70.4, 74.4, 72.3),
    (59.2, 77.4, 67.1),
    (60.8, 75.1, 67.2),
    (62.9, 75.6, 68.7),
]


def test_perfect_and_total_error(rng):
    t = LabelMask((rng.random((6, 6)) < 0.5).astype(np.uint8))
    c = confusion(t, t)
    assert c.fp == c.fn == 0 and c.total == 36
    c = confusion(LabelMask(np.ones((4, 4), np.uint8)), LabelMask(np.zeros((4, 4), np.uint8)))
    assert c == Confusion(0, 16, 0, 0)


def test_random_pair_matches_pixel_loop(rng):
    for _ in range(10):
        p = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        t = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        assert tuple(confusion(LabelMask(p), LabelMask(t))) == confusion_oracle(p, t)


def test_domain_and_mismatch(rng):
    p = (rng.random((8, 8)) < 0.5).astype(np.uint8)
    t = (rng.random((8, 8)) < 0.5).astype(np.uint8)
    c = confusion(LabelMask(p), LabelMask(t), Roi(2, 1, 3, 4))
    assert tuple(c) == confusion_oracle(p[1:5, 2:5], t[1:5, 2:5])
    with pytest.raises(DimensionMismatchError):
        confusion(LabelMask(p), LabelMask(t[:4]))


@pytest.mark.parametrize("p,r,f", TABLE_ROWS)
def test_table_f1_reproduction(p, r, f):
    assert abs(100 * f1_score(p / 100, r / 100) - f) <= 0.1


def test_f1_from_counts():
    # tp/(tp+fp) = 381/1000 and tp/(tp+fn) = 912/1000
    c = Confusion(tp=381 * 912, fp=(1000 - 381) * 912, fn=381 * 88, tn=0)
    s = scores(c)
    assert s.precision == pytest.approx(0.381) and s.recall == pytest.approx(0.912)
    assert 100 * s.f1 == pytest.approx(53.7, abs=0.1)


def test_zero_over_zero():
    assert scores(Confusion(0, 0, 0, 10)) == (0.0, 0.0, 0.0)
    assert scores(Confusion(0, 5, 0, 0)) == (0.0, 0.0, 0.0)
    assert scores(Confusion(0, 0, 5, 0)) == (0.0, 0.0, 0.0)


def test_all_3x3_predictions_against_fixed_truth():
    truth = np.array([[0, 1, 0], [1, 1, 0], [0, 0, 1]], np.uint8)
    for bits in itertools.product((0, 1), repeat=9):
        pred = np.array(bits, np.uint8).reshape(3, 3)
        tp, fp, fn, tn = confusion_oracle(pred, truth)
        c = confusion(LabelMask(pred), LabelMask(truth))
        assert tuple(c) == (tp, fp, fn, tn)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        assert scores(c) == pytest.approx((prec, rec, f), abs=1e-15)


def near_model():
    return CascadeModel(near_forest(1000), near_forest(1000, 0.8, 0.3), roi_margin=3, min_blob_area=5)


def test_identical_images_report_equal_scores():
    pair = blob_pair()
    r = evaluate_batch(near_model(), [pair] * 3)
    assert all(s == r.scores for s in r.per_image)
    assert r.scores.f1 == 1.0
    assert set(r.timing) >= {"image_ms", "stage1_ms", "rois_ms", "stage2_ms", "filter_ms", "total_ms"}


def test_global_scores_are_micro_averaged():
    # a second scene where a near object is not labelled as hand
    good = blob_pair()
    d = good.depth.data.copy()
    d[20:28, 28:36] = 700
    bad = type(good)(type(good.depth)(d), good.labels)
    r = evaluate_batch(near_model(), [good, bad, bad])
    assert r.confusion == Confusion.pooled(r.per_image_confusion)
    assert r.scores == scores(r.confusion)
    mean_f1 = np.mean([s.f1 for s in r.per_image])
    assert r.scores.f1 != pytest.approx(mean_f1)
    r2 = evaluate_batch(near_model(), [bad, good, bad])
    assert r2.scores == r.scores


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        evaluate_batch(near_model(), [])


def test_timing_stats():
    s = timing_stats([1.0, 2.0, 3.0, 10.0])
    assert s["mean"] == 4.0 and s["median"] == 2.5
    assert s["p95"] == pytest.approx(np.percentile([1, 2, 3, 10], 95))


def test_report_files(tmp_path):
    r = evaluate_batch(near_model(), [blob_pair(), blob_pair(near=800)], names=["a.png", "b.png"])
    write_report_csv(r, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "image,precision,recall,f1,ms"
    assert [l.split(",")[0] for l in lines[1:]] == ["a.png", "b.png", "ALL"]
    assert all(l.split(",")[4] for l in lines[1:])
    write_report_csv(r, tmp_path / "n.csv", timing=False)
    assert all(l.endswith(",") for l in (tmp_path / "n.csv").read_text().splitlines()[1:])
    write_report_json(r, tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["scores"]["f1"] == r.scores.f1 and len(d["images"]) == 2
