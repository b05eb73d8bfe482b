"""Detection scoring and per-step defect statistics.

Point detections and ground-truth points are expanded to fixed-size
boxes and matched greedily in descending score order; a match needs
strict IoU above the threshold and, by default, an equal class label.
The step-series half aggregates detection counts across repeated runs
of a stepped experiment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .matching import correlate_bank, extract_peaks
from .pipeline import DetectionSet, candidates_to_detections
from .synth import GroundTruth


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


@dataclass(frozen=True)
class MatchPair:
    pred_id: int
    gt_index: int
    iou: float


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[MatchPair, ...]
    unmatched_pred: tuple[int, ...]  # prediction ids
    unmatched_gt: tuple[int, ...]  # gt point indices


def _box(x: int, y: int, side: int) -> tuple[int, int, int, int]:
    # half-open pixel box centered on the point (left-biased for even sides)
    lo = side // 2
    return x - lo, y - lo, x - lo + side, y - lo + side


def _iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def match_detections(pred: DetectionSet, gt: GroundTruth, iou_thresh: float = 0.5,
                     box_side: int = 21, class_aware: bool = True) -> Assignment:
    """Greedily assign predictions to ground-truth points.

    Predictions labeled false are dropped before matching. Each gt point
    matches at most once; a prediction takes the highest-IoU eligible gt
    (ties to the lowest gt index). Unscored predictions sort first.
    """
    if box_side <= 0:
        raise ValueError(f"box_side must be positive, got {box_side}")
    cands = [d for d in pred.detections if d.final_label != "false"]
    cands.sort(key=lambda d: (-(d.score if d.score is not None else np.inf), d.id))
    gt_boxes = [_box(p.x, p.y, box_side) for p in gt.points]
    taken = [False] * len(gt.points)

    if iou_thresh >= 0:
        # Nonzero overlap needs Chebyshev distance < box_side, so only the
        # 3x3 cell neighbourhood can beat a nonnegative best_iou. Ascending
        # index order keeps the lowest-index tie winner of the full scan.
        cells: dict[tuple[int, int], list[int]] = {}
        for i, p in enumerate(gt.points):
            cells.setdefault((p.x // box_side, p.y // box_side), []).append(i)

        def eligible(x: int, y: int) -> list[int]:
            cx, cy = x // box_side, y // box_side
            near = []
            for gx in (cx - 1, cx, cx + 1):
                for gy in (cy - 1, cy, cy + 1):
                    near.extend(cells.get((gx, gy), ()))
            near.sort()
            return near
    else:
        everything = list(range(len(gt.points)))

        def eligible(x: int, y: int) -> list[int]:
            return everything

    pairs = []
    unmatched_pred = []
    for d in cands:
        db = _box(d.x, d.y, box_side)
        best_i, best_iou = -1, iou_thresh
        for i in eligible(d.x, d.y):
            if taken[i]:
                continue
            p = gt.points[i]
            if class_aware and p.label != d.final_label:
                continue
            v = _iou(db, gt_boxes[i])
            if v > best_iou:
                best_i, best_iou = i, v
        if best_i >= 0:
            taken[best_i] = True
            pairs.append(MatchPair(d.id, best_i, best_iou))
        else:
            unmatched_pred.append(d.id)
    unmatched_gt = tuple(i for i, t in enumerate(taken) if not t)
    return Assignment(tuple(pairs), tuple(unmatched_pred), unmatched_gt)


def prf(assignment: Assignment) -> Metrics:
    return _metrics(len(assignment.pairs), len(assignment.unmatched_pred),
                    len(assignment.unmatched_gt))


def _metrics(tp: int, fp: int, fn: int) -> Metrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(tp, fp, fn, precision, recall, f1)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    metrics: Metrics


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    best_threshold: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "tp", "fp", "fn", "precision", "recall", "f1"])
            for r in self.rows:
                m = r.metrics
                w.writerow([f"{r.threshold:g}", m.tp, m.fp, m.fn,
                            f"{m.precision:.6g}", f"{m.recall:.6g}", f"{m.f1:.6g}"])


def sweep_threshold(pairs, bank, model, thresholds, *, iou_thresh: float = 0.5,
                    box_side: int = 21, class_aware: bool = True, jobs=None,
                    progress=None) -> SweepResult:
    """Micro-averaged metrics per threshold over (image, ground truth) pairs.

    Correlation maps are computed once per image and peaks re-extracted
    per threshold, so the sweep costs one bank pass plus cheap NMS. Rows
    come back sorted ascending; the best row maximizes f1, ties to the
    lower threshold.
    """
    ts = sorted(set(float(t) for t in thresholds))
    if not ts:
        raise ValueError("need at least one threshold")
    if any(not 0.0 < t < 1.0 for t in ts):
        raise ValueError(f"thresholds must lie in (0, 1): {ts}")
    counts = {t: [0, 0, 0] for t in ts}
    for idx, (img, gt) in enumerate(pairs):
        sets = detect_at_thresholds(img, bank, ts, model=model,
                                    image_id=f"img{idx}", jobs=jobs)
        for t, ds in zip(ts, sets):
            a = match_detections(ds, gt, iou_thresh, box_side, class_aware)
            counts[t][0] += len(a.pairs)
            counts[t][1] += len(a.unmatched_pred)
            counts[t][2] += len(a.unmatched_gt)
        if progress is not None:
            progress(idx + 1, len(pairs))
    rows = tuple(SweepRow(t, _metrics(*counts[t])) for t in ts)
    best = max(rows, key=lambda r: (r.metrics.f1, -r.threshold))
    return SweepResult(rows, best.threshold)


def detect_at_thresholds(img, bank, thresholds, *, model=None, image_id="image",
                         jobs=None) -> list[DetectionSet]:
    """One detection pass per threshold sharing a single correlation run.

    Classifier outputs are cached by candidate position, so a peak that
    survives several thresholds is classified once.
    """
    entries = getattr(bank, "entries", bank)
    cm = correlate_bank(img, entries, jobs=jobs)
    kinds = [e.kind for e in entries]
    cache: dict = {}
    out = []
    h, w = img.shape
    for t in thresholds:
        cands = extract_peaks(cm, t, kinds=kinds)
        dets = candidates_to_detections(img, cands, model, cache=cache)
        out.append(DetectionSet(image=image_id, width=w, height=h,
                                threshold=float(t), detections=dets))
    return out


@dataclass(frozen=True)
class StepStats:
    step: int
    junction_mean: float
    junction_std: float
    terminal_mean: float
    terminal_std: float


@dataclass(frozen=True)
class StepSeries:
    steps: tuple[StepStats, ...]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "junction_mean", "junction_std",
                        "terminal_mean", "terminal_std"])
            for s in self.steps:
                w.writerow([s.step, f"{s.junction_mean:.6g}", f"{s.junction_std:.6g}",
                            f"{s.terminal_mean:.6g}", f"{s.terminal_std:.6g}"])


def _sample_std(vals) -> float:
    if len(vals) < 2:
        return 0.0
    return float(np.std(vals, ddof=1))


def step_series(runs) -> StepSeries:
    """Mean and sample std of junction/terminal counts per step over runs.

    ``runs`` is a list of runs, each a list of DetectionSets ordered by
    step; every run must cover the same number of steps.
    """
    if not runs or not runs[0]:
        raise ValueError("need at least one run with at least one step")
    n_steps = len(runs[0])
    for r in runs:
        if len(r) != n_steps:
            raise ValueError(f"runs cover different step counts: {len(r)} != {n_steps}")
    stats = []
    for s in range(n_steps):
        j = [r[s].count("junction") for r in runs]
        t = [r[s].count("terminal") for r in runs]
        stats.append(StepStats(s, float(np.mean(j)), _sample_std(j),
                               float(np.mean(t)), _sample_std(t)))
    return StepSeries(tuple(stats))
