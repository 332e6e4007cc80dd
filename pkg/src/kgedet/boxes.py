"""Axis-aligned boxes, overlap measures, and the JSON-lines interchange format.

Boxes are (x1, y1, x2, y2) with x1 < x2 and y1 < y2, in pixel coordinates
with y growing downward.  Groundtruth and detections share one record type;
groundtruth rows simply carry no score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class AnnotatedBox:
    """One labeled box: groundtruth when ``score`` is None, detection otherwise."""

    image_id: str
    box: Box
    label: str
    score: float | None = None


def validate_box(box: Box) -> None:
    x1, y1, x2, y2 = box
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"degenerate box {box}: requires x1 < x2 and y1 < y2")


def box_area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def intersection_area(a: Box, b: Box) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union, in [0, 1]."""
    validate_box(a)
    validate_box(b)
    inter = intersection_area(a, b)
    union = box_area(a) + box_area(b) - inter
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the hull area not covered by the union,
    normalized by the hull.  In (-1, 1]; equals IoU when the hull is the union."""
    validate_box(a)
    validate_box(b)
    inter = intersection_area(a, b)
    union = box_area(a) + box_area(b) - inter
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter / union - (hull - union) / hull


def load_jsonl(path) -> list[AnnotatedBox]:
    """Read boxes from JSON lines: {"image_id", "box", "class", "score"?}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                box = tuple(float(v) for v in rec["box"])
                out.append(
                    AnnotatedBox(
                        image_id=str(rec["image_id"]),
                        box=box,
                        label=str(rec["class"]),
                        score=None if rec.get("score") is None else float(rec["score"]),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad box record ({exc})") from exc
    return out


def dump_jsonl(boxes: Iterable[AnnotatedBox], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in boxes:
            rec = {"image_id": b.image_id, "box": list(b.box), "class": b.label}
            if b.score is not None:
                rec["score"] = b.score
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def group_by_image(boxes: Sequence[AnnotatedBox]) -> dict[str, list[AnnotatedBox]]:
    grouped: dict[str, list[AnnotatedBox]] = {}
    for b in boxes:
        grouped.setdefault(b.image_id, []).append(b)
    return grouped
