import numpy as np
import pytest

from embref.evalmetrics import BUCKETS, EvalReport, evaluate, format_report, iou


def test_iou_identity_and_disjoint():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_iou_partial_overlap():
    assert iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)


def test_iou_symmetry(rng):
    for _ in range(100):
        a = np.sort(rng.uniform(0, 50, 4)).reshape(2, 2).T.reshape(-1)
        b = np.sort(rng.uniform(0, 50, 4)).reshape(2, 2).T.reshape(-1)
        a = [a[0], a[2], a[1], a[3]]
        b = [b[0], b[2], b[1], b[3]]
        assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-12)


def test_iou_degenerate_box_warns():
    with pytest.warns(UserWarning):
        assert iou((5, 5, 5, 9), (0, 0, 10, 10)) == 0.0


def _boxes(n, rng, size=100):
    out = {}
    for i in range(n):
        x0, y0 = rng.uniform(0, size - 20, 2)
        w, h = rng.uniform(5, 20, 2)
        out[f"s{i:03d}"] = np.array([x0, y0, x0 + w, y0 + h])
    return out


def test_evaluate_perfect_and_null(rng):
    gts = _boxes(30, rng)
    perfect = evaluate(dict(gts), gts)
    for x in (0.25, 0.50, 0.75):
        assert perfect.prec[(x, "all")] == 100.0
    null = evaluate({k: v + 1000.0 for k, v in gts.items()}, gts)
    for x in (0.25, 0.50, 0.75):
        assert null.prec[(x, "all")] == 0.0


def test_evaluate_handcrafted_pairs():
    pairs = {
        "a": ((0, 0, 10, 10), (0, 0, 10, 10)),   # 1.0
        "b": ((0, 0, 10, 10), (5, 0, 15, 10)),   # 1/3
        "c": ((0, 0, 10, 10), (0, 0, 10, 5)),    # 0.5
        "d": ((0, 0, 10, 10), (30, 30, 40, 40)), # 0.0
        "e": ((0, 0, 10, 10), (1, 1, 9, 9)),     # 0.64
    }
    gts = {k: np.array(v[0], dtype=float) for k, v in pairs.items()}
    preds = {k: np.array(v[1], dtype=float) for k, v in pairs.items()}
    report = evaluate(preds, gts)
    assert report.prec[(0.25, "all")] == pytest.approx(100 * 4 / 5)
    assert report.prec[(0.50, "all")] == pytest.approx(100 * 2 / 5)
    assert report.prec[(0.75, "all")] == pytest.approx(100 * 1 / 5)


def test_evaluate_monotone_in_threshold(rng):
    gts = _boxes(40, rng)
    preds = {k: v + rng.uniform(-6, 6, 4) for k, v in gts.items()}
    report = evaluate(preds, gts)
    for bucket in BUCKETS:
        series = [report.prec[(x, bucket)] for x in (0.25, 0.50, 0.75)]
        assert series == sorted(series, reverse=True)


def test_evaluate_order_invariance(rng):
    gts = _boxes(20, rng)
    preds = {k: v + rng.uniform(-4, 4, 4) for k, v in gts.items()}
    fwd = evaluate(preds, gts)
    shuffled_gts = dict(reversed(list(gts.items())))
    shuffled_preds = dict(reversed(list(preds.items())))
    back = evaluate(shuffled_preds, shuffled_gts)
    assert fwd.prec == back.prec


def test_evaluate_missing_prediction_counts_as_miss(rng):
    gts = _boxes(10, rng)
    preds = dict(gts)
    del preds["s000"]
    with pytest.warns(UserWarning, match="s000"):
        report = evaluate(preds, gts)
    assert report.prec[(0.25, "all")] == pytest.approx(90.0)
    missing = [r for r in report.per_sample if r["missing"]]
    assert len(missing) == 1 and missing[0]["sample_id"] == "s000"


def test_bucket_combination_is_count_weighted(rng):
    gts = _boxes(33, rng)
    preds = {k: v + rng.uniform(-5, 5, 4) for k, v in gts.items()}
    report = evaluate(preds, gts)
    for x in (0.25, 0.50, 0.75):
        weighted = sum(
            report.prec[(x, b)] * report.bucket_counts[b] for b in ("small", "medium", "large")
        ) / sum(report.bucket_counts[b] for b in ("small", "medium", "large"))
        assert report.prec[(x, "all")] == pytest.approx(weighted, abs=1e-9)


def test_report_layout_and_save(tmp_path, rng):
    gts = _boxes(12, rng)
    report = evaluate(dict(gts), gts)
    text = format_report(report)
    lines = text.strip().splitlines()
    assert lines[0].split() == list(BUCKETS)
    assert [l.split()[0] for l in lines[1:4]] == ["IoU=0.25", "IoU=0.50", "IoU=0.75"]
    assert all(len(l.split()) == 5 for l in lines[1:4])  # 1 label + 4 buckets
    assert "unofficial" in text
    report.save(tmp_path)
    assert (tmp_path / "report.txt").exists()
    assert (tmp_path / "report.json").exists()
    per_sample = (tmp_path / "per_sample.jsonl").read_text().strip().splitlines()
    assert len(per_sample) == 12
