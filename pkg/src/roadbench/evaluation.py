"""Detection scoring: greedy matching, PR curves, AP, and per-class reports.

All box comparisons happen in normalized coordinates. Intersection over
union is invariant under independent x/y scaling, so normalized and pixel
IoU agree for boxes on the same image and no dimensions are needed here.

Matching is the usual greedy scheme: detections in descending confidence
order (ties broken by input order) each claim the unmatched ground-truth
box of the same class with the highest IoU, provided it reaches the
threshold. Matching runs per image; results are pooled across images for
the precision/recall curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .backend import Detection, DetectionSet
from .dataset import GroundTruthSet
from .errors import ConfigError
from .geometry import NormBox, iou, norm_corners

# IoU thresholds averaged for the strict mAP variant: 0.50, 0.55, ... 0.95.
IOU_GRID = tuple((50 + 5 * i) / 100 for i in range(10))

AP_MODES = ("coco101", "voc11")


@dataclass(frozen=True)
class MatchEntry:
    """Outcome of greedy matching for one detection.

    gt_index is None for an unmatched detection (a false positive);
    iou holds the best candidate overlap seen, matched or not.
    """

    det_index: int
    detection: Detection
    gt_index: Optional[int]
    iou: float


def match_greedy(
    dets: Sequence[Detection],
    gt_boxes: Sequence[tuple[int, NormBox]],
    iou_threshold: float,
    class_agnostic: bool = False,
) -> list[MatchEntry]:
    """Match detections against one image's ground truth.

    Detections are processed in descending confidence order, ties by
    ascending input index. Each claims the not-yet-claimed ground-truth
    box with the highest IoU at or above the threshold; IoU ties go to
    the lowest ground-truth index. Entries come back in input order.
    """
    gt_corners = [norm_corners(box) for _, box in gt_boxes]
    taken = [False] * len(gt_boxes)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    entries: list[Optional[MatchEntry]] = [None] * len(dets)
    for i in order:
        det = dets[i]
        det_corners = norm_corners(det.box)
        best_j = -1
        best_iou = 0.0
        for j, (gt_class, _) in enumerate(gt_boxes):
            if taken[j]:
                continue
            if not class_agnostic and gt_class != det.class_index:
                continue
            overlap = iou(det_corners, gt_corners[j])
            if overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            taken[best_j] = True
            entries[i] = MatchEntry(i, det, best_j, best_iou)
        else:
            entries[i] = MatchEntry(i, det, None, best_iou)
    return [e for e in entries if e is not None]


def pr_curve(tp_flags: Sequence[bool], gt_count: int) -> list[tuple[float, float]]:
    """Cumulative (recall, precision) points from confidence-ordered flags.

    Flags must already be sorted by descending confidence. Returns the
    empty list when there is no ground truth, since recall is undefined.
    """
    if gt_count <= 0:
        return []
    points = []
    tp = 0
    for rank, hit in enumerate(tp_flags, start=1):
        if hit:
            tp += 1
        points.append((tp / gt_count, tp / rank))
    return points


def average_precision(curve: Sequence[tuple[float, float]], mode: str = "coco101") -> float:
    """Interpolated AP over a fixed recall grid.

    coco101 averages the precision envelope at 101 evenly spaced recall
    points; voc11 uses 11. Recall levels the curve never reaches
    contribute zero.
    """
    if mode not in AP_MODES:
        raise ConfigError(f"unknown AP mode {mode!r}; expected one of {AP_MODES}")
    if not curve:
        return 0.0
    recalls = np.array([r for r, _ in curve], dtype=np.float64)
    precisions = np.array([p for _, p in curve], dtype=np.float64)
    # envelope[i] = best precision at recall >= recalls[i]
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    # exact fractions (k/100) so recall values that equal a grid level
    # compare as equal rather than straddling a rounding artifact
    points = 101 if mode == "coco101" else 11
    grid = np.arange(points, dtype=np.float64) / (points - 1)
    idx = np.searchsorted(recalls, grid, side="left")
    reached = idx < len(recalls)
    sampled = np.where(reached, envelope[np.minimum(idx, len(recalls) - 1)], 0.0)
    return float(sampled.mean())


def _pooled_flags(
    dets: DetectionSet,
    gts: GroundTruthSet,
    class_index: int,
    iou_threshold: float,
) -> tuple[list[bool], int]:
    """Per-image matching pooled into one confidence-ordered flag list.

    The pooled sort key (-confidence, image_id, detection index) keeps
    the result independent of image iteration order.
    """
    pooled = []
    gt_count = 0
    for image_id in gts.image_ids():
        ann = gts.images[image_id]
        gt_class = [(c, b) for c, b in ann.boxes if c == class_index]
        gt_count += len(gt_class)
        image_dets = [d for d in dets.for_image(image_id) if d.class_index == class_index]
        for entry in match_greedy(image_dets, gt_class, iou_threshold):
            pooled.append(
                (-entry.detection.confidence, image_id, entry.det_index, entry.gt_index is not None)
            )
    pooled.sort()
    return [hit for _, _, _, hit in pooled], gt_count


def _mean_present(per_class: dict[int, Optional[float]]) -> float:
    values = [v for v in per_class.values() if v is not None]
    if not values:
        return 0.0
    return float(sum(values) / len(values))


def map_at(
    dets: DetectionSet,
    gts: GroundTruthSet,
    iou_threshold: float = 0.5,
    ap_mode: str = "coco101",
) -> tuple[dict[int, Optional[float]], float]:
    """AP per class at one IoU threshold, plus the macro mean.

    Classes with no ground-truth instances map to None and are excluded
    from the mean. No confidence cut is applied; the curve sweeps every
    detection.
    """
    per_class: dict[int, Optional[float]] = {}
    counts = gts.class_counts()
    for index in range(len(gts.taxonomy)):
        if counts[index] == 0:
            per_class[index] = None
            continue
        flags, gt_count = _pooled_flags(dets, gts, index, iou_threshold)
        per_class[index] = average_precision(pr_curve(flags, gt_count), ap_mode)
    return per_class, _mean_present(per_class)


def map_range(
    dets: DetectionSet,
    gts: GroundTruthSet,
    ap_mode: str = "coco101",
    thresholds: Sequence[float] = IOU_GRID,
) -> tuple[dict[int, Optional[float]], float]:
    """Per-class AP averaged over an IoU threshold grid (default 0.50:0.05:0.95)."""
    per_threshold = [map_at(dets, gts, t, ap_mode)[0] for t in thresholds]
    merged: dict[int, Optional[float]] = {}
    for index in range(len(gts.taxonomy)):
        values = [pc[index] for pc in per_threshold]
        if values[0] is None:
            merged[index] = None
        else:
            merged[index] = float(sum(values) / len(values))
    return merged, _mean_present(merged)


def _match_counts(
    dets: DetectionSet,
    gts: GroundTruthSet,
    class_index: int,
    conf_threshold: float,
    iou_threshold: float,
) -> tuple[int, int]:
    """(true positives, false positives) for one class above a confidence cut."""
    tp = 0
    fp = 0
    for image_id in gts.image_ids():
        ann = gts.images[image_id]
        gt_class = [(c, b) for c, b in ann.boxes if c == class_index]
        image_dets = [
            d
            for d in dets.for_image(image_id)
            if d.class_index == class_index and d.confidence >= conf_threshold
        ]
        for entry in match_greedy(image_dets, gt_class, iou_threshold):
            if entry.gt_index is None:
                fp += 1
            else:
                tp += 1
    return tp, fp


def confusion_matrix(
    dets: DetectionSet,
    gts: GroundTruthSet,
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.45,
) -> np.ndarray:
    """(n+1) x (n+1) confusion counts; rows predicted, columns true.

    Matching here is class-agnostic so that a well-placed box of the
    wrong class lands in an off-diagonal cell instead of counting twice.
    The extra final row/column is background: unmatched ground truth
    falls in the last row, unmatched detections in the last column.
    Summing a true-class column over all rows recovers that class's
    ground-truth instance count.
    """
    n = len(gts.taxonomy)
    matrix = np.zeros((n + 1, n + 1), dtype=np.int64)
    for image_id in gts.image_ids():
        ann = gts.images[image_id]
        image_dets = [d for d in dets.for_image(image_id) if d.confidence >= conf_threshold]
        entries = match_greedy(image_dets, ann.boxes, iou_threshold, class_agnostic=True)
        claimed = set()
        for entry in entries:
            if entry.gt_index is None:
                matrix[entry.detection.class_index, n] += 1
            else:
                claimed.add(entry.gt_index)
                matrix[entry.detection.class_index, ann.boxes[entry.gt_index][0]] += 1
        for j, (gt_class, _) in enumerate(ann.boxes):
            if j not in claimed:
                matrix[n, gt_class] += 1
    return matrix


@dataclass(frozen=True)
class EvalSettings:
    """Knobs that shape a report; echoed alongside results."""

    conf_threshold: float = 0.25
    iou_threshold: float = 0.45
    ap_mode: str = "coco101"

    def __post_init__(self):
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigError(f"conf_threshold must be within [0, 1], got {self.conf_threshold}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must be within [0, 1], got {self.iou_threshold}")
        if self.ap_mode not in AP_MODES:
            raise ConfigError(f"unknown AP mode {self.ap_mode!r}; expected one of {AP_MODES}")

    def to_dict(self) -> dict:
        return {
            "conf_threshold": self.conf_threshold,
            "iou_threshold": self.iou_threshold,
            "ap_mode": self.ap_mode,
        }


@dataclass(frozen=True)
class ClassMetrics:
    """One report row. Metrics are None when the class has no ground truth."""

    name: str
    instances: int
    precision: Optional[float]
    recall: Optional[float]
    map50: Optional[float]
    map50_95: Optional[float]


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Full evaluation output: per-class rows, macro summary, confusion."""

    settings: EvalSettings
    overall: ClassMetrics
    per_class: tuple[ClassMetrics, ...]
    class_names: tuple[str, ...]
    confusion: np.ndarray


def per_class_report(
    dets: DetectionSet,
    gts: GroundTruthSet,
    settings: Optional[EvalSettings] = None,
) -> EvalReport:
    """Score detections against ground truth, one row per taxonomy class.

    Precision and recall use the confidence cut from the settings; the
    AP columns sweep all confidences. The overall row macro-averages the
    classes that have at least one ground-truth instance.
    """
    if settings is None:
        settings = EvalSettings()
    counts = gts.class_counts()
    ap50, _ = map_at(dets, gts, 0.5, settings.ap_mode)
    ap_range, _ = map_range(dets, gts, settings.ap_mode)
    rows = []
    for index, name in enumerate(gts.taxonomy.names):
        gt_count = counts[index]
        if gt_count == 0:
            rows.append(ClassMetrics(name, 0, None, None, None, None))
            continue
        tp, fp = _match_counts(dets, gts, index, settings.conf_threshold, settings.iou_threshold)
        precision = tp / (tp + fp) if tp + fp else 0.0
        rows.append(
            ClassMetrics(name, gt_count, precision, tp / gt_count, ap50[index], ap_range[index])
        )
    present = [r for r in rows if r.instances > 0]

    def macro(attr: str) -> float:
        values = [getattr(r, attr) for r in present]
        return float(sum(values) / len(values)) if values else 0.0

    overall = ClassMetrics(
        "all",
        sum(r.instances for r in rows),
        macro("precision"),
        macro("recall"),
        macro("map50"),
        macro("map50_95"),
    )
    return EvalReport(
        settings=settings,
        overall=overall,
        per_class=tuple(rows),
        class_names=tuple(gts.taxonomy.names),
        confusion=confusion_matrix(dets, gts, settings.conf_threshold, settings.iou_threshold),
    )


def unknown_image_ids(dets: DetectionSet, gts: GroundTruthSet) -> list[str]:
    """Prediction image ids that have no ground-truth record."""
    return sorted(set(dets.images) - set(gts.images))
