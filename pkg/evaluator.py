import logging
from dataclasses import dataclass, field

import config
from errors import InputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    boxes: tuple


@dataclass(frozen=True)
class ScoredBox:
    image_id: str
    bbox: object
    score: float = 0.0


@dataclass
class EvalReport:
    matched: int = 0
    total_gt: int = 0
    total_pred: int = 0
    iou_threshold: float = config.EVAL_IOU_THRESHOLD
    # (prediction index, ground-truth index) pairs, per image when merged
    pairs: list = field(default_factory=list, repr=False)

    @property
    def false_positives(self):
        return self.total_pred - self.matched

    @property
    def detection_rate(self):
        # no ground truth means nothing could be detected
        return self.matched / self.total_gt if self.total_gt else 0.0

    def merge(self, other):
        return EvalReport(self.matched + other.matched, self.total_gt + other.total_gt,
                          self.total_pred + other.total_pred, self.iou_threshold,
                          self.pairs + other.pairs)

    def summary(self):
        return {
            "matched": self.matched,
            "total_gt": self.total_gt,
            "total_pred": self.total_pred,
            "false_positives": self.false_positives,
            "detection_rate": self.detection_rate,
            "iou_threshold": self.iou_threshold,
        }


def iou(a, b):
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / (a.w * a.h + b.w * b.h - inter)


def match_detections(preds, gts, iou_thr=config.EVAL_IOU_THRESHOLD):
    """
    Greedy one-to-one matching. Predictions (objects with .bbox and .score)
    are visited by descending score; each takes the free ground-truth box
    with the highest IoU at or above the threshold, lowest index on ties.
    """
    if not 0 < iou_thr <= 1:
        raise InputError(f"IoU threshold must be in (0,1], got {iou_thr}")
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    taken = [False] * len(gts)
    pairs = []
    for pi in order:
        best, best_iou = -1, 0.0
        for gi, g in enumerate(gts):
            if taken[gi]:
                continue
            v = iou(preds[pi].bbox, g)
            if v >= iou_thr and v > best_iou:
                best, best_iou = gi, v
        if best >= 0:
            taken[best] = True
            pairs.append((pi, best))
    return EvalReport(len(pairs), len(gts), len(preds), iou_thr, pairs)


def evaluate(preds, gts, iou_thr=config.EVAL_IOU_THRESHOLD):
    """
    Match per image and pool the counts. preds: ScoredBox list;
    gts: GroundTruth list. Images present on one side only still count.
    """
    by_image = {}
    for p in preds:
        by_image.setdefault(p.image_id, ([], []))[0].append(p)
    for g in gts:
        by_image.setdefault(g.image_id, ([], []))[1].extend(g.boxes)

    report = EvalReport(iou_threshold=iou_thr)
    for image_id in sorted(by_image):
        p, g = by_image[image_id]
        r = match_detections(p, g, iou_thr)
        logger.debug("%s: %d/%d matched, %d predictions", image_id, r.matched, r.total_gt, r.total_pred)
        report = report.merge(r)
    return report
