"""Detection metrics and the error-distribution analysis suite.

Average precision follows the COCO convention: greedy score-ordered
matching per class and IoU threshold, 101-point interpolated area under the
precision envelope, means over the 0.50:0.05:0.95 threshold grid.  Beyond
plain AP there are instance-weighted and category-level variants, plus
confusion-matrix extraction and Jensen-Shannon comparison of
misclassification rows.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .boxes import AnnotatedBox, group_by_image, iou
from .knowledge_graph import CategoryMap

IOU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
MISSED = "__missed__"


# ---------------------------------------------------------------------------
# Average precision


@dataclass
class APReport:
    ap: float
    ap50: float
    ap75: float
    ap_weighted: float
    per_class: dict[str, float]
    excluded_classes: list[str]
    ap_category: float | None = None
    ap_category_weighted: float | None = None
    per_category: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_weighted": self.ap_weighted,
            "ap_category": self.ap_category,
            "ap_category_weighted": self.ap_category_weighted,
            "per_class": self.per_class,
            "per_category": self.per_category,
            "excluded_classes": self.excluded_classes,
        }


def _class_ap(
    detections: Sequence[AnnotatedBox],
    groundtruth: Sequence[AnnotatedBox],
    threshold: float,
) -> float:
    """AP for one class at one IoU threshold (101-point interpolation)."""
    n_gt = len(groundtruth)
    if not detections:
        return 0.0
    order = sorted(
        range(len(detections)), key=lambda i: (-(detections[i].score or 0.0), i)
    )
    gt_by_image = group_by_image(groundtruth)
    matched: dict[str, set[int]] = {img: set() for img in gt_by_image}
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = detections[i]
        candidates = gt_by_image.get(det.image_id, [])
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(candidates):
            if j in matched[det.image_id]:
                continue
            overlap = iou(det.box, gt.box)
            if overlap >= threshold and overlap > best_iou:
                best_iou, best_j = overlap, j
        if best_j >= 0:
            matched[det.image_id].add(best_j)
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, len(order) + 1)
    # precision envelope: best precision at any recall >= r
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    indices = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(indices < len(precision), precision[np.minimum(indices, len(precision) - 1)], 0.0)
    return float(sampled.mean())


def _relabel(boxes: Sequence[AnnotatedBox], mapping: Mapping[str, str]) -> list[AnnotatedBox]:
    out = []
    for b in boxes:
        if b.label not in mapping:
            raise ValueError(f"label {b.label!r} missing from the category map")
        out.append(AnnotatedBox(b.image_id, b.box, mapping[b.label], b.score))
    return out


def _ap_by_label(
    detections: Sequence[AnnotatedBox],
    groundtruth: Sequence[AnnotatedBox],
    thresholds: Sequence[float],
) -> tuple[dict[str, dict[float, float]], dict[str, int], list[str]]:
    """Per-label AP at each threshold, groundtruth counts, excluded labels."""
    gt_labels = {g.label for g in groundtruth}
    det_labels = {d.label for d in detections}
    excluded = sorted(det_labels - gt_labels)
    labels = sorted(gt_labels)
    table: dict[str, dict[float, float]] = {}
    counts: dict[str, int] = {}
    for label in labels:
        dets = [d for d in detections if d.label == label]
        gts = [g for g in groundtruth if g.label == label]
        counts[label] = len(gts)
        table[label] = {t: _class_ap(dets, gts, t) for t in thresholds}
    return table, counts, excluded


def average_precision(
    detections: Sequence[AnnotatedBox],
    groundtruth: Sequence[AnnotatedBox],
    categories: CategoryMap | None = None,
    iou_thresholds: Sequence[float] = IOU_GRID,
) -> APReport:
    """COCO-style AP report.

    Classes without groundtruth are excluded from every mean and reported.
    ``ap_weighted`` weights each class by its groundtruth instance count.
    With a category map, labels are first mapped to categories and a
    prediction only needs the right category to count (``ap_category``).
    """
    if not groundtruth:
        raise ValueError("no groundtruth boxes")
    for det in detections:
        if det.score is None:
            raise ValueError("detections must carry scores")
        if not 0.0 <= det.score <= 1.0:
            raise ValueError(f"detection score {det.score} outside [0, 1]")
    table, counts, excluded = _ap_by_label(detections, groundtruth, iou_thresholds)
    per_class = {label: float(np.mean(list(rows.values()))) for label, rows in table.items()}
    ap = float(np.mean(list(per_class.values())))
    ap50 = float(np.mean([rows[0.5] for rows in table.values()]))
    ap75 = float(np.mean([rows[0.75] for rows in table.values()]))
    weights = np.array([counts[label] for label in per_class], dtype=np.float64)
    values = np.array(list(per_class.values()))
    ap_weighted = float((values * weights).sum() / weights.sum())

    report = APReport(
        ap=ap,
        ap50=ap50,
        ap75=ap75,
        ap_weighted=ap_weighted,
        per_class=per_class,
        excluded_classes=excluded,
    )
    if categories is not None:
        cat_table, cat_counts, _ = _ap_by_label(
            _relabel(detections, categories.assignment),
            _relabel(groundtruth, categories.assignment),
            iou_thresholds,
        )
        per_cat = {c: float(np.mean(list(rows.values()))) for c, rows in cat_table.items()}
        cat_weights = np.array([cat_counts[c] for c in per_cat], dtype=np.float64)
        cat_values = np.array(list(per_cat.values()))
        report.ap_category = float(np.mean(cat_values))
        report.ap_category_weighted = float((cat_values * cat_weights).sum() / cat_weights.sum())
        report.per_category = per_cat
    return report


# ---------------------------------------------------------------------------
# Confusion matrices


@dataclass
class ConfusionMatrix:
    """Groundtruth-class rows vs predicted-class columns, plus a trailing
    column for groundtruth that no detection matched."""

    classes: list[str]
    counts: np.ndarray  # (C, C + 1) int64

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.classes)
        if self.counts.shape != (c, c + 1):
            raise ValueError(f"counts must be ({c}, {c + 1})")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be nonnegative")

    def foreground(self) -> np.ndarray:
        """The C x C block without the missed column."""
        return self.counts[:, :-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", *self.classes, MISSED])
        for name, row in zip(self.classes, self.counts):
            writer.writerow([name, *[int(v) for v in row]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[0] != "class" or header[-1] != MISSED:
            raise ValueError("confusion CSV header must be: class, <classes...>, " + MISSED)
        classes = header[1:-1]
        rows = []
        for record in reader:
            if not record:
                continue
            rows.append([int(v) for v in record[1:]])
        return cls(classes=classes, counts=np.array(rows, dtype=np.int64))


def confusion_matrix(
    detections: Sequence[AnnotatedBox],
    groundtruth: Sequence[AnnotatedBox],
    classes: Sequence[str],
    iou_floor: float = 0.8,
) -> ConfusionMatrix:
    """Assign each groundtruth box the single highest-scoring detection with
    IoU >= ``iou_floor``; unmatched groundtruth lands in the missed column."""
    index = {name: i for i, name in enumerate(classes)}
    c = len(classes)
    counts = np.zeros((c, c + 1), dtype=np.int64)
    dets_by_image = group_by_image(list(detections))
    for gt in groundtruth:
        if gt.label not in index:
            raise ValueError(f"groundtruth label {gt.label!r} not in class list")
        best_score, best_label = -1.0, None
        for det in dets_by_image.get(gt.image_id, []):
            if det.score is None:
                raise ValueError("detections must carry scores")
            if iou(det.box, gt.box) >= iou_floor and det.score > best_score:
                best_score, best_label = det.score, det.label
        row = index[gt.label]
        if best_label is None:
            counts[row, c] += 1
        else:
            if best_label not in index:
                raise ValueError(f"detection label {best_label!r} not in class list")
            counts[row, index[best_label]] += 1
    return ConfusionMatrix(classes=list(classes), counts=counts)


def confusion_from_labels(
    true_ids: np.ndarray, predicted_ids: np.ndarray, classes: Sequence[str]
) -> ConfusionMatrix:
    """Classification-level confusion counts from 1-based class ids
    (predicted 0 = background counts as missed)."""
    t = np.asarray(true_ids, dtype=np.int64)
    p = np.asarray(predicted_ids, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("label arrays must have equal length")
    c = len(classes)
    counts = np.zeros((c, c + 1), dtype=np.int64)
    for ti, pi in zip(t, p):
        if ti < 1:
            continue  # background groundtruth has no confusion row
        counts[ti - 1, pi - 1 if pi >= 1 else c] += 1
    return ConfusionMatrix(classes=list(classes), counts=counts)


# ---------------------------------------------------------------------------
# Jensen-Shannon analysis


def js_distance(p, q) -> float:
    """Jensen-Shannon distance between two count rows, base-2 logs, in [0, 1].

    Rows are normalized to distributions; 0 * log 0 is 0; disjoint supports
    give exactly 1.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("rows must have equal length")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("count rows must be nonnegative")
    if p.sum() == 0 or q.sum() == 0:
        raise ValueError("rows must each have at least one positive entry")
    p = p / p.sum()
    q = q / q.sum()
    m = (p + q) / 2.0

    def kl(a: np.ndarray) -> float:
        mask = a > 0
        return float((a[mask] * np.log2(a[mask] / m[mask])).sum())

    return math.sqrt(max((kl(p) + kl(q)) / 2.0, 0.0))


@dataclass
class ErrorComparison:
    per_class: dict[str, float | None]  # None when a row was skipped
    weighted_mean: float
    skipped: list[str]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "js_distance"])
        for name, value in self.per_class.items():
            writer.writerow([name, "" if value is None else repr(value)])
        writer.writerow(["__weighted_mean__", repr(self.weighted_mean)])
        return buf.getvalue()


def error_distribution_comparison(
    matrix_a: ConfusionMatrix,
    matrix_b: ConfusionMatrix,
    weights: Mapping[str, float],
) -> ErrorComparison:
    """Row-wise JS distance between the two matrices' misclassification
    distributions (diagonal and missed column removed), weighted-averaged by
    groundtruth counts.  Rows with no errors in either matrix are skipped."""
    if matrix_a.classes != matrix_b.classes:
        raise ValueError("confusion matrices must share the class order")
    per_class: dict[str, float | None] = {}
    skipped = []
    total_weight = 0.0
    acc = 0.0
    for i, name in enumerate(matrix_a.classes):
        row_a = np.delete(matrix_a.foreground()[i], i)
        row_b = np.delete(matrix_b.foreground()[i], i)
        if row_a.sum() == 0 or row_b.sum() == 0:
            per_class[name] = None
            skipped.append(name)
            continue
        value = js_distance(row_a, row_b)
        per_class[name] = value
        w = float(weights.get(name, 0.0))
        acc += w * value
        total_weight += w
    weighted_mean = acc / total_weight if total_weight > 0 else 0.0
    return ErrorComparison(per_class=per_class, weighted_mean=weighted_mean, skipped=skipped)


# ---------------------------------------------------------------------------
# Category-level confusion split


@dataclass
class CategoryConfusion:
    intra: int
    inter: int
    fraction_intra: float
    misses: int
    degenerate: bool  # no off-diagonal confusions at all

    def to_json(self) -> dict:
        return {
            "intra": self.intra,
            "inter": self.inter,
            "fraction_intra": self.fraction_intra,
            "misses": self.misses,
            "degenerate": self.degenerate,
        }


def category_confusion(matrix: ConfusionMatrix, categories: CategoryMap) -> CategoryConfusion:
    """Split off-diagonal confusions by whether groundtruth and prediction
    share a category.  Missed groundtruth is counted separately."""
    for name in matrix.classes:
        if name not in categories:
            raise ValueError(f"class {name!r} missing from the category map")
    block = matrix.foreground()
    intra = inter = 0
    for i, gt_name in enumerate(matrix.classes):
        for j, pred_name in enumerate(matrix.classes):
            if i == j:
                continue
            count = int(block[i, j])
            if categories[gt_name] == categories[pred_name]:
                intra += count
            else:
                inter += count
    total = intra + inter
    return CategoryConfusion(
        intra=intra,
        inter=inter,
        fraction_intra=intra / total if total else 0.0,
        misses=int(matrix.counts[:, -1].sum()),
        degenerate=total == 0,
    )
