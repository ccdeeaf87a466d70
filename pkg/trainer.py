"""
Attentional cascade training: Haar feature enumeration, AdaBoost stumps and
hard-negative mining from a pool of negative images.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

import config
from cascade import (Cascade, HaarFeature, Stage, WeakClassifier, WeightedRect,
                     batch_feature_values, score_windows, window_norms)
from errors import InputError, InsufficientSamples
from imaging import GrayImage, downscale
from integral import Rect, WindowBatch
from worker_pool import run_dispatched

logger = logging.getLogger(__name__)

# name -> (x units, y units, [(ux, uy, weight), ...]) with one unit rect per entry
TEMPLATES = {
    "two_horizontal": (2, 1, [(0, 0, 1), (1, 0, -1)]),
    "two_vertical": (1, 2, [(0, 0, 1), (0, 1, -1)]),
    "three_horizontal": (3, 1, [(0, 0, 1), (1, 0, -2), (2, 0, 1)]),
    "three_vertical": (1, 3, [(0, 0, 1), (0, 1, -2), (0, 2, 1)]),
    "four_checker": (2, 2, [(0, 0, 1), (1, 0, -1), (0, 1, -1), (1, 1, 1)]),
}

EPS_FLOOR = 1e-10


class Label(Enum):
    NEGATIVE = 0
    POSITIVE = 1


@dataclass
class TrainSample:
    window: GrayImage
    label: Label
    weight: float = 1.0

    def __post_init__(self):
        if self.weight <= 0:
            raise InputError(f"sample weight must be > 0, got {self.weight}")


@dataclass(frozen=True)
class TrainConfig:
    num_stages: int = config.TRAIN_STAGES
    min_detection_rate: float = config.TRAIN_MIN_DETECTION_RATE
    max_false_positive_rate: float = config.TRAIN_MAX_FALSE_POSITIVE_RATE
    max_weak_per_stage: int = config.TRAIN_MAX_WEAK_PER_STAGE
    feature_fraction: float = config.TRAIN_FEATURE_FRACTION
    seed: int = config.TRAIN_SEED
    window: int = config.WINDOW_SIZE
    min_feature_size: int = 1
    feature_stride: int = 1
    variance_normalization: bool = True
    # negatives mined per stage; None means as many as there are positives
    negatives_per_stage: int = None
    pool_sample_windows: int = config.TRAIN_POOL_SAMPLE_WINDOWS
    max_mining_windows: int = config.TRAIN_MAX_MINING_WINDOWS
    workers: int = 1
    chunk: int = config.TRAIN_FEATURE_CHUNK

    def __post_init__(self):
        if not 0 < self.max_false_positive_rate < 1:
            raise InputError(f"false positive target must be in (0,1), got {self.max_false_positive_rate}")
        if not 0 < self.min_detection_rate <= 1:
            raise InputError(f"detection target must be in (0,1], got {self.min_detection_rate}")
        if self.num_stages < 1 or self.max_weak_per_stage < 1:
            raise InputError("need at least one stage and one weak classifier per stage")
        if not 0 < self.feature_fraction <= 1:
            raise InputError(f"feature fraction must be in (0,1], got {self.feature_fraction}")


@dataclass(frozen=True)
class StumpChoice:
    feature_index: int
    threshold: int
    polarity: int
    error: float


@dataclass(frozen=True)
class TrainedWeak:
    classifier: WeakClassifier
    error: float
    feature_index: int
    # no stump beats a coin flip, or the best one puts every sample on one side
    degenerate: bool = False


@dataclass(frozen=True)
class TrainedStage:
    stage: Stage
    detection_rate: float
    false_positive_rate: float
    target_met: bool


@dataclass
class StageLogRow:
    stage: int
    weak_count: int
    detection_rate: float
    false_positive_rate: float
    pool_false_positive_rate: float
    negatives: int
    target_met: bool


@dataclass
class TrainResult:
    cascade: Cascade
    log: list = field(default_factory=list)
    stopped_early: bool = False


# ─── features ──────────────────────────────────────────────────────────────
def enumerate_features(win_w, win_h, min_size=1, stride=1, templates=None):
    """All placements and sizes of the upright templates inside the window."""
    if win_w < 2 or win_h < 2:
        raise InputError(f"window must be at least 2x2, got {win_w}x{win_h}")
    if min_size < 1 or stride < 1:
        raise InputError("min_size and stride must be >= 1")
    features = []
    for name in templates or TEMPLATES:
        bx, by, cells = TEMPLATES[name]
        for uw in range(min_size, win_w // bx + 1):
            for uh in range(min_size, win_h // by + 1):
                for y in range(0, win_h - by * uh + 1, stride):
                    for x in range(0, win_w - bx * uw + 1, stride):
                        rects = tuple(
                            WeightedRect(Rect(x + cx * uw, y + cy * uh, uw, uh), weight)
                            for cx, cy, weight in cells)
                        features.append(HaarFeature(rects))
    return features


class FeatureBank:
    """
    Features as a linear map from flattened padded integrals to feature
    values, so a block of features is one matrix product.
    """

    def __init__(self, features, win_w, win_h):
        self.features = list(features)
        self.win_w = win_w
        self.win_h = win_h
        self.stride = win_w + 1
        self.cells = (win_h + 1) * (win_w + 1)
        feat, flat, coeff = [], [], []
        for i, f in enumerate(self.features):
            for wr in f.rects:
                r = wr.rect
                for row, col, sign in ((r.bottom, r.right, 1), (r.y, r.right, -1),
                                       (r.bottom, r.x, -1), (r.y, r.x, 1)):
                    feat.append(i)
                    flat.append(row * self.stride + col)
                    coeff.append(sign * wr.weight)
        self._feat = np.array(feat, dtype=np.intp)
        self._flat = np.array(flat, dtype=np.intp)
        self._coeff = np.array(coeff, dtype=np.float64)

    def __len__(self):
        return len(self.features)

    def matrix(self, start, stop):
        sel = (self._feat >= start) & (self._feat < stop)
        m = np.zeros((self.cells, stop - start))
        np.add.at(m, (self._flat[sel], self._feat[sel] - start), self._coeff[sel])
        return m

    def values(self, flat_integrals, start, stop):
        """Feature values, shape (stop - start, N); exact integers."""
        return np.rint(flat_integrals @ self.matrix(start, stop)).T


# ─── weak learner ──────────────────────────────────────────────────────────
def sweep_stumps(x, positive, weights):
    """
    Best integer-threshold stump for every row of x (features x samples).

    Polarity +1 predicts positive when x > t, polarity -1 when x < t.
    Returns per-row (error, threshold, polarity) arrays.
    """
    rows, n = x.shape
    order = np.argsort(x, axis=1, kind="stable")
    xs = np.take_along_axis(x, order, axis=1)
    wp = np.where(positive, weights, 0.0)[order]
    wn = np.where(positive, 0.0, weights)[order]
    cp = np.cumsum(wp, axis=1)
    cn = np.cumsum(wn, axis=1)
    total_p = cp[:, -1:]
    total_n = cn[:, -1:]

    up = np.ceil(xs)
    lo = np.floor(xs)
    # +1: samples after split k are positive, t = ceil(x_k)
    err_plus = cp + (total_n - cn)
    err_plus[:, :-1] = np.where(up[:, :-1] < up[:, 1:], err_plus[:, :-1], np.inf)
    t_plus = up
    # -1: samples up to split k are positive, t = floor(x_{k+1})
    err_minus = (total_p - cp) + cn
    err_minus[:, :-1] = np.where(lo[:, :-1] < lo[:, 1:], err_minus[:, :-1], np.inf)
    t_minus = np.empty_like(lo)
    t_minus[:, :-1] = lo[:, 1:]
    t_minus[:, -1] = lo[:, -1] + 1

    errors = np.concatenate([total_n, err_plus, err_minus], axis=1)
    thresholds = np.concatenate([up[:, :1] - 1, t_plus, t_minus], axis=1)
    polarity = np.concatenate([np.ones((rows, n + 1)), -np.ones((rows, n))], axis=1)

    best = np.argmin(errors, axis=1)
    pick = np.arange(rows)
    return errors[pick, best], thresholds[pick, best].astype(np.int64), polarity[pick, best].astype(np.int64)


def best_stump(x, positive, weights, offset=0):
    """Lowest-error stump over the rows of x; ties go to the lowest row."""
    err, thr, pol = sweep_stumps(x, positive, weights)
    i = int(np.argmin(err))
    return StumpChoice(offset + i, int(thr[i]), int(pol[i]), float(err[i]))


def adaboost_alpha(error):
    eps = min(max(error, EPS_FLOOR), 0.5)
    beta = eps / (1.0 - eps)
    return math.log(1.0 / beta), beta


class _SampleSet:
    """Stacked training windows with their integrals and normalization."""

    def __init__(self, windows, labels, win_w, win_h, normalize):
        patches = np.stack([w.pixels for w in windows])
        self.batch = WindowBatch.from_patches(patches, with_squares=normalize)
        self.flat = self.batch.padded.reshape(len(windows), -1).astype(np.float64)
        self.norms = window_norms(self.batch, win_w, win_h, normalize)
        self.positive = np.asarray(labels, dtype=bool)

    @property
    def count(self):
        return self.positive.size


def _search(bank, samples, weights, chunk, workers):
    blocks = [(start, min(start + chunk, len(bank))) for start in range(0, len(bank), chunk)]

    def search_block(block):
        start, stop = block
        x = bank.values(samples.flat, start, stop) / samples.norms[np.newaxis, :]
        return best_stump(x, samples.positive, weights, offset=start)

    choices = run_dispatched(blocks, search_block, workers)
    return min(choices, key=lambda c: (c.error, c.feature_index))


def _predict(weak, samples):
    fv = batch_feature_values(weak.feature, samples.batch)
    return weak.polarity * (fv - weak.threshold * samples.norms) > 0


def _fit_weak(bank, samples, weights, chunk, workers):
    choice = _search(bank, samples, weights, chunk, workers)
    stump = WeakClassifier(bank.features[choice.feature_index], choice.threshold,
                           choice.polarity, 1.0, -1.0)
    predicted = _predict(stump, samples)
    wrong = predicted != samples.positive
    error = float(weights[wrong].sum())
    alpha, beta = adaboost_alpha(error)
    weak = WeakClassifier(stump.feature, stump.threshold, stump.polarity, alpha, -alpha)
    # a stump that gives every sample the same vote cannot separate anything
    splits = bool(predicted.any()) and not bool(predicted.all())
    degenerate = error >= 0.5 or not splits
    return TrainedWeak(weak, error, choice.feature_index, degenerate=degenerate), wrong, beta


def train_weak(features, samples, normalize=True, workers=1, chunk=config.TRAIN_FEATURE_CHUNK):
    """Fit one decision stump to weighted samples; weights are normalized first."""
    labels = [s.label == Label.POSITIVE for s in samples]
    if all(labels) or not any(labels):
        raise InsufficientSamples("weak learner needs positive and negative samples")
    win = samples[0].window
    bank = FeatureBank(features, win.width, win.height)
    data = _SampleSet([s.window for s in samples], labels, win.width, win.height, normalize)
    weights = np.array([s.weight for s in samples], dtype=np.float64)
    weights /= weights.sum()
    trained, _, _ = _fit_weak(bank, data, weights, chunk, workers)
    return trained


# ─── stages ────────────────────────────────────────────────────────────────
def calibrate_threshold(positive_scores, min_detection_rate):
    """Largest threshold that keeps at least the target share of positives."""
    scores = np.sort(positive_scores)
    need = math.ceil(min_detection_rate * scores.size - 1e-9)
    return float(scores[scores.size - need])


def _fit_stage(bank, samples, cfg):
    p = int(samples.positive.sum())
    n = samples.count - p
    weights = np.where(samples.positive, 0.5 / p, 0.5 / n)
    weak = []
    score = np.zeros(samples.count)
    dr = fp = 1.0
    threshold = -math.inf
    met = False
    while len(weak) < cfg.max_weak_per_stage:
        weights = weights / weights.sum()
        trained, wrong, beta = _fit_weak(bank, samples, weights, cfg.chunk, cfg.workers)
        if trained.degenerate and weak:
            logger.info("no weak classifier beats chance, closing stage at %d", len(weak))
            break
        weak.append(trained.classifier)
        passed = _predict(trained.classifier, samples)
        score += np.where(passed, trained.classifier.vote_pass, trained.classifier.vote_fail)
        weights = weights * np.where(wrong, 1.0, beta)

        threshold = calibrate_threshold(score[samples.positive], cfg.min_detection_rate)
        accepted = score >= threshold
        dr = float(accepted[samples.positive].mean())
        fp = float(accepted[~samples.positive].mean())
        logger.debug("weak %d: error %.4f, stage dr %.4f fp %.4f",
                     len(weak), trained.error, dr, fp)
        if fp <= cfg.max_false_positive_rate:
            met = True
            break
    return TrainedStage(Stage(tuple(weak), threshold), dr, fp, met)


def train_stage(samples, cfg=None, features=None):
    """Grow one boosted stage until its false-positive target is met."""
    cfg = cfg or TrainConfig()
    labels = [s.label == Label.POSITIVE for s in samples]
    if all(labels) or not any(labels):
        raise InsufficientSamples("a stage needs positive and negative samples")
    features = features if features is not None else _select_features(cfg)
    bank = FeatureBank(features, cfg.window, cfg.window)
    data = _SampleSet([s.window for s in samples], labels, cfg.window, cfg.window,
                      cfg.variance_normalization)
    return _fit_stage(bank, data, cfg)


def _select_features(cfg):
    features = enumerate_features(cfg.window, cfg.window, cfg.min_feature_size, cfg.feature_stride)
    if cfg.feature_fraction < 1:
        rng = np.random.default_rng(cfg.seed)
        keep = max(1, int(round(len(features) * cfg.feature_fraction)))
        index = np.sort(rng.choice(len(features), size=keep, replace=False))
        features = [features[i] for i in index]
    return features


# ─── hard-negative mining ──────────────────────────────────────────────────
class NegativePool:
    """Random windows drawn from negative images at several scales."""

    def __init__(self, images, window, rng, levels=config.PYRAMID_LEVELS,
                 scale_factor=config.PYRAMID_SCALE_FACTOR):
        self.window = window
        self.rng = rng
        self.rasters = []
        for img in images:
            for s in range(levels):
                f = scale_factor ** s
                w, h = math.floor(img.width / f), math.floor(img.height / f)
                if w < window or h < window:
                    break
                self.rasters.append(downscale(img, w, h).pixels)
        if not self.rasters:
            raise InsufficientSamples("negative pool holds no image larger than the window")
        self.drawn = 0

    def draw(self, count):
        which = self.rng.integers(0, len(self.rasters), size=count)
        out = np.empty((count, self.window, self.window), dtype=np.uint8)
        for i, r in enumerate(which):
            raster = self.rasters[r]
            y = self.rng.integers(0, raster.shape[0] - self.window + 1)
            x = self.rng.integers(0, raster.shape[1] - self.window + 1)
            out[i] = raster[y:y + self.window, x:x + self.window]
        self.drawn += count
        return out


def _accepted(cascade, patches):
    if cascade is None:
        return np.ones(len(patches), dtype=bool)
    batch = WindowBatch.from_patches(patches, with_squares=cascade.variance_normalization)
    return score_windows(cascade, batch).accepted


def mine_negatives(pool, cascade, count, max_windows, block=4096):
    """
    Collect windows from the pool that the current cascade still accepts.
    Returns fewer than count when the window budget runs out.
    """
    found = []
    have = 0
    start = pool.drawn
    while have < count and pool.drawn - start < max_windows:
        patches = pool.draw(min(block, max_windows - (pool.drawn - start)))
        hits = patches[_accepted(cascade, patches)]
        found.append(hits)
        have += len(hits)
    mined = np.concatenate(found)[:count] if found else np.empty((0, pool.window, pool.window), np.uint8)
    logger.debug("mined %d hard negatives from %d windows", len(mined), pool.drawn - start)
    return mined


class CascadeTrainer:
    """Attentional cascade trainer; one stage at a time on mined negatives."""

    def __init__(self, cfg=None):
        self.cfg = cfg or TrainConfig()
        self.log = []

    def train(self, positives, negative_images):
        cfg = self.cfg
        if len(positives) < 10:
            raise InsufficientSamples(f"need at least 10 positive windows, got {len(positives)}")
        for p in positives:
            if p.width != cfg.window or p.height != cfg.window:
                raise InputError(f"positive window {p.width}x{p.height} does not match {cfg.window}")

        rng = np.random.default_rng(cfg.seed)
        features = _select_features(cfg)
        bank = FeatureBank(features, cfg.window, cfg.window)
        logger.info("training on %d positives with %d features", len(positives), len(bank))
        pool = NegativePool(negative_images, cfg.window, rng)
        held_out = pool.draw(cfg.pool_sample_windows)
        pos_patches = np.stack([p.pixels for p in positives])
        wanted = cfg.negatives_per_stage or len(positives)

        stages = []
        cascade = None
        stopped = False
        for k in range(cfg.num_stages):
            negatives = mine_negatives(pool, cascade, wanted, cfg.max_mining_windows)
            if len(negatives) < wanted:
                logger.warning("negative pool exhausted at stage %d (%d/%d windows)",
                               k + 1, len(negatives), wanted)
                stopped = True
                if len(negatives) == 0:
                    break
            windows = [GrayImage(w) for w in pos_patches] + [GrayImage(w) for w in negatives]
            labels = [True] * len(pos_patches) + [False] * len(negatives)
            data = _SampleSet(windows, labels, cfg.window, cfg.window, cfg.variance_normalization)
            trained = _fit_stage(bank, data, cfg)
            stages.append(trained.stage)
            cascade = Cascade(cfg.window, cfg.window, tuple(stages), cfg.variance_normalization)

            pool_fp = float(_accepted(cascade, held_out).mean())
            row = StageLogRow(k + 1, len(trained.stage.weak), trained.detection_rate,
                              trained.false_positive_rate, pool_fp, len(negatives), trained.target_met)
            self.log.append(row)
            logger.info("stage %d: %d weak, dr %.4f, fp %.4f, pool fp %.2e%s", row.stage,
                        row.weak_count, row.detection_rate, row.false_positive_rate, pool_fp,
                        "" if row.target_met else " (target unmet)")
            if stopped:
                break

        if cascade is None:
            raise InsufficientSamples("negative pool produced no training windows")
        return TrainResult(cascade, list(self.log), stopped)


def train_cascade(positives, negative_images, cfg=None):
    return CascadeTrainer(cfg).train(positives, negative_images)
