"""IoU and precision-at-threshold evaluation with size buckets.

Reports Prec@{0.25, 0.50, 0.75} overall and per size bucket. Buckets are
ground-truth-area tertiles of the evaluation split (the benchmark does not
publish official boundaries, so reports label them "unofficial tertiles").
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

THRESHOLDS = (0.25, 0.50, 0.75)
BUCKETS = ("all", "small", "medium", "large")


def iou(box_a, box_b) -> float:
    """Intersection over union of two (x_min, y_min, x_max, y_max) boxes."""
    a = np.asarray(box_a, dtype=np.float64)
    b = np.asarray(box_b, dtype=np.float64)
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    if area_a == 0.0 or area_b == 0.0:
        warnings.warn("IoU of a degenerate (zero-area) box is 0", stacklevel=2)
        return 0.0
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return float(inter / (area_a + area_b - inter))


@dataclass
class EvalReport:
    prec: dict[tuple[float, str], float]      # (threshold, bucket) -> percentage
    per_sample: list[dict] = field(default_factory=list)
    bucket_thresholds: tuple[float, float] = (0.0, 0.0)
    bucket_counts: dict[str, int] = field(default_factory=dict)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as f:
            json.dump(
                {
                    "prec": {f"{x:.2f}/{bucket}": v for (x, bucket), v in self.prec.items()},
                    "bucket_thresholds": list(self.bucket_thresholds),
                    "bucket_counts": self.bucket_counts,
                },
                f,
                indent=1,
            )
        with open(out / "per_sample.jsonl", "w") as f:
            for row in self.per_sample:
                f.write(json.dumps(row) + "\n")
        with open(out / "report.txt", "w") as f:
            f.write(format_report(self))


def _bucket_of(area: float, thresholds: tuple[float, float]) -> str:
    if area <= thresholds[0]:
        return "small"
    if area <= thresholds[1]:
        return "medium"
    return "large"


def evaluate(
    predictions: dict[str, np.ndarray],
    ground_truths: dict[str, np.ndarray],
    thresholds=THRESHOLDS,
) -> EvalReport:
    """Score one top-1 predicted box per sample against its ground truth.

    Samples missing from ``predictions`` count as misses (IoU 0) and are
    flagged in the per-sample records.
    """
    ids = sorted(ground_truths)
    areas = np.array(
        [
            (ground_truths[i][2] - ground_truths[i][0])
            * (ground_truths[i][3] - ground_truths[i][1])
            for i in ids
        ],
        dtype=np.float64,
    )
    t1, t2 = np.quantile(areas, [1 / 3, 2 / 3]) if len(areas) else (0.0, 0.0)
    bucket_thresholds = (float(t1), float(t2))

    per_sample = []
    for sample_id, area in zip(ids, areas):
        gt = ground_truths[sample_id]
        pred = predictions.get(sample_id)
        if pred is None:
            warnings.warn(f"no prediction for sample {sample_id!r}; counted as a miss")
            score = 0.0
        else:
            score = iou(pred, gt)
        bucket = _bucket_of(float(area), bucket_thresholds)
        per_sample.append(
            {
                "sample_id": sample_id,
                "iou": score,
                "bucket": bucket,
                "missing": pred is None,
                "hits": {f"{x:.2f}": bool(score > x) for x in thresholds},
            }
        )

    prec: dict[tuple[float, str], float] = {}
    counts: dict[str, int] = {}
    for bucket in BUCKETS:
        rows = per_sample if bucket == "all" else [r for r in per_sample if r["bucket"] == bucket]
        counts[bucket] = len(rows)
        for x in thresholds:
            if rows:
                hits = sum(r["hits"][f"{x:.2f}"] for r in rows)
                prec[(x, bucket)] = 100.0 * hits / len(rows)
            else:
                prec[(x, bucket)] = 0.0
    return EvalReport(
        prec=prec,
        per_sample=per_sample,
        bucket_thresholds=bucket_thresholds,
        bucket_counts=counts,
    )


def format_report(report: EvalReport) -> str:
    """Text table: thresholds x (all, small, medium, large)."""
    lines = []
    header = f"{'':>10}" + "".join(f"{b:>9}" for b in BUCKETS)
    lines.append(header)
    thresholds = sorted({x for x, _ in report.prec})
    for x in thresholds:
        row = f"IoU={x:.2f} " + "".join(f"{report.prec[(x, b)]:>9.1f}" for b in BUCKETS)
        lines.append(row)
    t1, t2 = report.bucket_thresholds
    lines.append(
        f"size buckets (unofficial tertiles of gt area): small <= {t1:.0f} < medium <= {t2:.0f} < large"
    )
    lines.append(
        "counts: " + ", ".join(f"{b}={report.bucket_counts.get(b, 0)}" for b in BUCKETS)
    )
    return "\n".join(lines) + "\n"
