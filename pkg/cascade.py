"""
Haar-feature cascade model: window evaluation, batch scoring and the
versioned JSON cascade file.

Scalar (eval_window) and batch (score_windows) evaluation share the same
arithmetic, so both produce identical decisions and scores.
"""
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from errors import (CascadeSchemaError, EmptyCascade, EmptyStage, MissingField,
                    RectOutOfBounds, RectOutOfWindow, UnsupportedVersion)
from integral import Rect, WindowBatch, rect_square_sum, rect_sum

logger = logging.getLogger(__name__)

CASCADE_FILE_VERSION = 1

# Byte accounting used by Cascade.size(): a rect is packed as x,y,w,h + weight,
# a weak classifier as feature header + i32 threshold + polarity + two f32 votes
HEADER_BYTES = 4
STAGE_BYTES = 6
WEAK_BYTES = 14
RECT_BYTES = 5


@dataclass(frozen=True)
class WeightedRect:
    rect: Rect
    weight: int


@dataclass(frozen=True)
class HaarFeature:
    rects: tuple

    def __post_init__(self):
        if not 2 <= len(self.rects) <= 4:
            raise CascadeSchemaError(f"a feature needs 2-4 rectangles, got {len(self.rects)}")
        if sum(r.weight * r.rect.area for r in self.rects) != 0:
            raise CascadeSchemaError("feature weights are not zero-mean")

    def fits(self, win_w, win_h):
        return all(r.rect.inside(win_w, win_h) for r in self.rects)


@dataclass(frozen=True)
class WeakClassifier:
    feature: HaarFeature
    threshold: int
    polarity: int
    vote_pass: float
    vote_fail: float

    def __post_init__(self):
        if self.polarity not in (-1, 1):
            raise CascadeSchemaError(f"polarity must be -1 or +1, got {self.polarity}")


@dataclass(frozen=True)
class Stage:
    weak: tuple
    threshold: float

    def __post_init__(self):
        if not self.weak:
            raise EmptyStage("stage has no weak classifiers")


@dataclass(frozen=True)
class Cascade:
    window_w: int
    window_h: int
    stages: tuple
    variance_normalization: bool = True

    def __post_init__(self):
        if not self.stages:
            raise EmptyCascade("cascade has no stages")

    @property
    def weak_count(self):
        return sum(len(s.weak) for s in self.stages)

    def size(self):
        """Serialized parameter footprint in bytes."""
        total = HEADER_BYTES
        for stage in self.stages:
            total += STAGE_BYTES
            for weak in stage.weak:
                total += WEAK_BYTES + RECT_BYTES * len(weak.feature.rects)
        return total

    def truncated(self, num_stages):
        return Cascade(self.window_w, self.window_h, self.stages[:num_stages],
                       self.variance_normalization)


@dataclass(frozen=True)
class WindowResult:
    accepted: bool
    # index of the rejecting stage, or the stage count when accepted
    stage: int
    score: float


@dataclass
class BatchResult:
    accepted: np.ndarray
    stage: np.ndarray
    score: np.ndarray = field(repr=False)


# ─── scalar evaluation ─────────────────────────────────────────────────────
def _scale_rect(r, scale):
    if scale == 1:
        return r
    return Rect(math.floor(r.x * scale + 0.5), math.floor(r.y * scale + 0.5),
                max(1, math.floor(r.w * scale + 0.5)), max(1, math.floor(r.h * scale + 0.5)))


def feature_value(f, ii, origin, scale=1.0):
    """Weighted sum of the feature's rectangle sums at the given window origin."""
    ox, oy = origin
    total = 0
    for wr in f.rects:
        r = _scale_rect(wr.rect, scale).shifted(ox, oy)
        total += wr.weight * rect_sum(ii, r)
    return total


def window_norm(c, ii, origin):
    if not c.variance_normalization:
        return 1.0
    win = Rect(origin[0], origin[1], c.window_w, c.window_h)
    n = win.area
    s = rect_sum(ii, win)
    sq = rect_square_sum(ii, win)
    return _norm_from_sums(n, s, sq)


def _norm_from_sums(n, s, sq):
    var = (n * sq - s * s) / (n * n)
    # flat windows have no contrast to normalise by
    return math.sqrt(var) if var > 0 else 1.0


def eval_window(c, ii, origin):
    """Run the cascade on one window; stops at the first failing stage."""
    x, y = origin
    if x < 0 or y < 0 or x + c.window_w > ii.width or y + c.window_h > ii.height:
        raise RectOutOfBounds(f"window at {origin} does not fit {ii.width}x{ii.height}")
    norm = window_norm(c, ii, origin)
    score = 0.0
    for k, stage in enumerate(c.stages):
        score = 0.0
        for weak in stage.weak:
            fv = feature_value(weak.feature, ii, origin)
            if weak.polarity * (fv - weak.threshold * norm) > 0:
                score += weak.vote_pass
            else:
                score += weak.vote_fail
        if score < stage.threshold:
            return WindowResult(False, k, score - stage.threshold)
    return WindowResult(True, len(c.stages), score - c.stages[-1].threshold)


# ─── batch evaluation ──────────────────────────────────────────────────────
def batch_feature_values(f, batch):
    total = None
    for wr in f.rects:
        r = wr.rect
        v = wr.weight * batch.rect_sums(r.x, r.y, r.w, r.h)
        total = v if total is None else total + v
    return total


def batch_norms(c, batch):
    return window_norms(batch, c.window_w, c.window_h, c.variance_normalization)


def window_norms(batch, win_w, win_h, normalize):
    if not normalize:
        return np.ones(batch.count)
    n = win_w * win_h
    s = batch.rect_sums(0, 0, win_w, win_h)
    sq = batch.square_sums(0, 0, win_w, win_h)
    var = (n * sq - s * s) / float(n * n)
    return np.sqrt(np.where(var > 0, var, 1.0))


def stage_scores(stage, batch, norms):
    score = np.zeros(batch.count)
    for weak in stage.weak:
        fv = batch_feature_values(weak.feature, batch)
        passed = weak.polarity * (fv - weak.threshold * norms) > 0
        score += np.where(passed, weak.vote_pass, weak.vote_fail)
    return score


def score_windows(c, batch):
    """
    Evaluate every window of the batch. Windows leave the active set at
    their rejecting stage, like the scalar path.
    """
    stage = np.full(batch.count, len(c.stages), dtype=np.int64)
    margin = np.zeros(batch.count)
    norms = batch_norms(c, batch)
    alive = np.arange(batch.count)
    for k, st in enumerate(c.stages):
        if alive.size == 0:
            break
        sub = batch.subset(alive)
        score = stage_scores(st, sub, norms[alive])
        margin[alive] = score - st.threshold
        rejected = score < st.threshold
        stage[alive[rejected]] = k
        alive = alive[~rejected]
    return BatchResult(stage == len(c.stages), stage, margin)


# ─── cascade file ──────────────────────────────────────────────────────────
def cascade_to_dict(c):
    return {
        "version": CASCADE_FILE_VERSION,
        "window": {"w": c.window_w, "h": c.window_h},
        "variance_normalization": c.variance_normalization,
        "stages": [
            {
                "threshold": s.threshold,
                "weak": [
                    {
                        "rects": [{"x": r.rect.x, "y": r.rect.y, "w": r.rect.w,
                                   "h": r.rect.h, "weight": r.weight}
                                  for r in w.feature.rects],
                        "threshold": w.threshold,
                        "polarity": w.polarity,
                        "vote_pass": w.vote_pass,
                        "vote_fail": w.vote_fail,
                    }
                    for w in s.weak
                ],
            }
            for s in c.stages
        ],
    }


def _field(obj, name, where, cast=None):
    if not isinstance(obj, dict) or name not in obj:
        raise MissingField(f"{where}: missing field '{name}'")
    value = obj[name]
    if cast is None:
        return value
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise CascadeSchemaError(f"{where}: field '{name}' is not a number ({value!r})") from None


def cascade_from_dict(data):
    version = _field(data, "version", "cascade")
    if version != CASCADE_FILE_VERSION:
        raise UnsupportedVersion(f"cascade file version {version} is not supported")
    window = _field(data, "window", "cascade")
    win_w = _field(window, "w", "window", int)
    win_h = _field(window, "h", "window", int)
    normalize = bool(_field(data, "variance_normalization", "cascade"))
    raw_stages = _field(data, "stages", "cascade")
    if not raw_stages:
        raise EmptyCascade("cascade file has no stages")

    stages = []
    for si, raw_stage in enumerate(raw_stages):
        where = f"stage {si}"
        raw_weak = _field(raw_stage, "weak", where)
        if not raw_weak:
            raise EmptyStage(f"{where} has no weak classifiers")
        weak = []
        for wi, rw in enumerate(raw_weak):
            wwhere = f"{where} weak {wi}"
            rects = []
            for rr in _field(rw, "rects", wwhere):
                r = Rect(*(_field(rr, k, wwhere + " rect", int) for k in ("x", "y", "w", "h")))
                if not r.inside(win_w, win_h):
                    raise RectOutOfWindow(f"{wwhere}: {r} outside {win_w}x{win_h} window")
                rects.append(WeightedRect(r, _field(rr, "weight", wwhere + " rect", int)))
            weak.append(WeakClassifier(
                HaarFeature(tuple(rects)),
                _field(rw, "threshold", wwhere, int),
                _field(rw, "polarity", wwhere, int),
                _field(rw, "vote_pass", wwhere, float),
                _field(rw, "vote_fail", wwhere, float),
            ))
        stages.append(Stage(tuple(weak), _field(raw_stage, "threshold", where, float)))
    return Cascade(win_w, win_h, tuple(stages), normalize)


def save_cascade(c, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cascade_to_dict(c), f, indent=1)
        f.write("\n")
    logger.info("saved %d-stage cascade (%d weak, %d B) to %s",
                len(c.stages), c.weak_count, c.size(), path)


def load_cascade(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise CascadeSchemaError(f"{path}: not a cascade file ({e})") from None
    try:
        return cascade_from_dict(data)
    except CascadeSchemaError as e:
        raise type(e)(f"{path}: {e}") from None
