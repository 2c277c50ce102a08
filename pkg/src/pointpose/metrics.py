"""Desk-scale evaluation: PCK and detection precision/recall.

Predicted persons are matched to ground truth greedily in descending score
order; a prediction claims the unmatched ground-truth box with the highest
IoU at or above the matching threshold. For PCK the threshold is 0.75: a
match must be the same person, and at this scale true decodes sit at IoU
>= 0.85 while cross-person corner composites stay below ~0.7. A keypoint
counts as correct when it lies within tau times the ground-truth box
diagonal. With no predictions precision is reported as 1.0 by convention
(and recall as 1.0 when there is no ground truth).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decode import PersonPose
from .grid import Box
from .scene import Scene, box_iou

PCK_MATCH_IOU = 0.75


@dataclass
class EvalReport:
    pck: float
    det_precision: float
    det_recall: float
    pck_tau: float
    iou_tau: float
    per_scene: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pck": self.pck,
            "det_precision": self.det_precision,
            "det_recall": self.det_recall,
            "pck_tau": self.pck_tau,
            "iou_tau": self.iou_tau,
            "per_scene": self.per_scene,
        }


def _greedy_match(
    pred_boxes: list[Box], gt_boxes: list[Box], iou_min: float
) -> list[tuple[int, int]]:
    """(pred_idx, gt_idx) pairs, preds visited in descending score order."""
    order = sorted(
        range(len(pred_boxes)),
        key=lambda i: (
            -pred_boxes[i].score,
            pred_boxes[i].x1,
            pred_boxes[i].y1,
            pred_boxes[i].x2,
            pred_boxes[i].y2,
        ),
    )
    taken = [False] * len(gt_boxes)
    pairs = []
    for i in order:
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(gt_boxes):
            if taken[j]:
                continue
            iou = box_iou(pred_boxes[i], gt)
            if iou >= iou_min and iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0:
            taken[best_j] = True
            pairs.append((i, best_j))
    return pairs


def pck(preds: list[PersonPose], scene: Scene, tau: float) -> float:
    """Fraction of visible ground-truth keypoints predicted within tolerance.

    Coordinates must be in input pixels. Preds are matched to persons by
    box IoU (greedy, descending score, IoU >= 0.75 to match); a keypoint is
    correct if present and within tau * gt-box diagonal of the annotation.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    total = sum(
        1 for p in scene.persons for kp in p.keypoints if kp.visible
    )
    if total == 0:
        return 1.0
    pairs = _greedy_match(
        [p.box for p in preds], [p.box for p in scene.persons], PCK_MATCH_IOU
    )
    correct = 0
    for pred_i, gt_j in pairs:
        person = scene.persons[gt_j]
        tol = tau * person.box.diagonal()
        for ch, kp in enumerate(person.keypoints):
            if not kp.visible or ch >= len(preds[pred_i].keypoints):
                continue
            pk = preds[pred_i].keypoints[ch]
            if pk.present and np.hypot(pk.x - kp.x, pk.y - kp.y) <= tol:
                correct += 1
    return correct / total


def det_pr(
    pred: list[Box], gt: list[Box], iou_tau: float
) -> tuple[float, float]:
    """Greedy one-to-one detection precision and recall at an IoU threshold."""
    if not 0.0 < iou_tau < 1.0:
        raise ValueError(f"iou_tau must be in (0,1), got {iou_tau}")
    pairs = _greedy_match(pred, gt, iou_tau)
    tp = len(pairs)
    precision = tp / len(pred) if pred else 1.0
    recall = tp / len(gt) if gt else 1.0
    return precision, recall
