"""
Multi-scale Viola-Jones detection over scratchpad-sized tiles.

Every pyramid level is split into overlapping tiles whose integral image fits
the scratch budget. Tiles are scanned by a worker pool; a hit is kept only by
the tile whose core region owns its origin, then mapped back to the original
image.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

import config
from cascade import score_windows
from errors import BudgetTooSmall, InputError, WindowLargerThanImage
from evaluator import iou
from imaging import downscale
from integral import Rect, WindowBatch, build_integral
from worker_pool import run_dispatched

logger = logging.getLogger(__name__)


class AccountingMode(Enum):
    II_ONLY = "ii_only"
    II_PLUS_INPUT = "ii_plus_input"
    II_PLUS_INPUT_PLUS_SQUARES = "ii_plus_input_plus_squares"

    @property
    def bytes_per_pixel(self):
        return {"ii_only": 4, "ii_plus_input": 5, "ii_plus_input_plus_squares": 13}[self.value]


@dataclass(frozen=True)
class PyramidConfig:
    scale_factor: float = config.PYRAMID_SCALE_FACTOR
    num_levels: int = config.PYRAMID_LEVELS
    max_detection_px: int = config.MAX_DETECTION_PX

    def __post_init__(self):
        if not self.scale_factor > 1:
            raise InputError(f"scale factor must be > 1, got {self.scale_factor}")
        if self.num_levels < 1:
            raise InputError(f"need at least one pyramid level, got {self.num_levels}")

    def factor(self, level):
        return self.scale_factor ** level


@dataclass(frozen=True)
class ScratchBudget:
    bytes: int = config.SCRATCH_BUDGET_BYTES
    mode: AccountingMode = AccountingMode.II_ONLY
    # bytes held by data that stays resident next to the tile (cascade parameters)
    reserved_bytes: int = config.CASCADE_RESIDENT_BYTES
    window: int = config.WINDOW_SIZE

    def __post_init__(self):
        if self.bytes <= 4 * self.window * self.window:
            raise BudgetTooSmall(
                f"scratch budget {self.bytes} B cannot hold a {self.window}x{self.window} integral image")
        if self.reserved_bytes < 0:
            raise InputError("reserved bytes must be >= 0")

    @property
    def usable(self):
        return self.bytes - self.reserved_bytes

    def tile_bytes(self, w, h):
        return w * h * self.mode.bytes_per_pixel


@dataclass(frozen=True)
class TileSpec:
    x: int
    y: int
    w: int
    h: int
    core: Rect

    def owns(self, lx, ly):
        return self.core.x <= lx < self.core.right and self.core.y <= ly < self.core.bottom


@dataclass(frozen=True)
class Detection:
    bbox: Rect
    level: int
    score: float
    # window origin in level coordinates
    origin: tuple = field(default=(0, 0), compare=False)

    @property
    def sort_key(self):
        return (self.level, self.origin[1], self.origin[0])


# ─── pyramid ───────────────────────────────────────────────────────────────
def level_dims(width, height, cfg):
    dims = []
    for s in range(cfg.num_levels):
        f = cfg.factor(s)
        dims.append((math.floor(width / f), math.floor(height / f)))
    return dims


def build_pyramid(img, cfg, window=config.WINDOW_SIZE):
    if img.width < window or img.height < window:
        raise WindowLargerThanImage(
            f"{img.width}x{img.height} image is smaller than the {window}x{window} window")
    levels = [img]
    for s, (w, h) in enumerate(level_dims(img.width, img.height, cfg)[1:], start=1):
        if w < window or h < window:
            logger.warning("pyramid stops at level %d: %dx%d is below the window", s, w, h)
            break
        levels.append(downscale(img, w, h))
    return levels


# ─── tiling ────────────────────────────────────────────────────────────────
def _origins(extent, tile, overlap):
    xs = [0]
    while xs[-1] + tile < extent:
        xs.append(xs[-1] + tile - overlap)
    return xs


def plan_tiles(level_w, level_h, budget, overlap=config.TILE_OVERLAP):
    """
    Split a level raster into tiles whose accounted bytes fit the budget.

    Tiles are full height whenever a minimum-width column fits, otherwise as
    tall as the budget allows. Each tile's core region runs from its origin to
    the next tile's origin, so cores partition the raster.
    """
    if overlap < 0:
        raise InputError(f"overlap must be >= 0, got {overlap}")
    bpp = budget.mode.bytes_per_pixel
    min_side = max(budget.window, overlap + 1)
    min_w = min(level_w, min_side)

    if budget.usable >= min_w * level_h * bpp:
        tile_h = level_h
    else:
        tile_h = budget.usable // (min_w * bpp)
        if tile_h < min(level_h, min_side):
            raise BudgetTooSmall(
                f"{budget.bytes} B ({budget.mode.value}) cannot fit a {min_w}-pixel wide tile "
                f"of height {min_side} with overlap {overlap}")
    tile_w = min(level_w, budget.usable // (tile_h * bpp))
    if tile_w < min_w:
        raise BudgetTooSmall(f"{budget.bytes} B leaves a tile width of {tile_w} px")

    xs = _origins(level_w, tile_w, overlap)
    ys = _origins(level_h, tile_h, overlap)
    tiles = []
    for j, y in enumerate(ys):
        h = min(tile_h, level_h - y)
        core_y1 = ys[j + 1] if j + 1 < len(ys) else level_h
        for i, x in enumerate(xs):
            w = min(tile_w, level_w - x)
            core_x1 = xs[i + 1] if i + 1 < len(xs) else level_w
            tiles.append(TileSpec(x, y, w, h, Rect(x, y, core_x1 - x, core_y1 - y)))
    logger.debug("%dx%d level: %d tiles of %dx%d (%d B each)", level_w, level_h,
                 len(tiles), tile_w, tile_h, budget.tile_bytes(tile_w, tile_h))
    return tiles


# ─── scanning ──────────────────────────────────────────────────────────────
def scan_tile(c, tile_pixels, step=config.SCAN_STEP, phase=(0, 0), level=0):
    """
    Evaluate every window of the tile at the given stride; returns accepted
    windows in tile coordinates. phase offsets the first origin so strides
    line up with the level raster.
    """
    if step < 1:
        raise InputError(f"scan step must be >= 1, got {step}")
    if tile_pixels.width < c.window_w or tile_pixels.height < c.window_h:
        return []
    ii = build_integral(tile_pixels, with_squares=c.variance_normalization)
    xs = np.arange(phase[0], tile_pixels.width - c.window_w + 1, step)
    ys = np.arange(phase[1], tile_pixels.height - c.window_h + 1, step)
    if xs.size == 0 or ys.size == 0:
        return []
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    batch = WindowBatch.from_integral(ii, gx.ravel(), gy.ravel())
    result = score_windows(c, batch)
    hits = np.flatnonzero(result.accepted)
    return [
        Detection(Rect(int(batch.ox[i]), int(batch.oy[i]), c.window_w, c.window_h), level,
                  float(result.score[i]), (int(batch.ox[i]), int(batch.oy[i])))
        for i in hits
    ]


def _scan_job(job):
    c, level_img, tile, level, step = job
    pixels = level_img.crop(tile.x, tile.y, tile.w, tile.h)
    phase = ((-tile.x) % step, (-tile.y) % step)
    kept = []
    for hit in scan_tile(c, pixels, step, phase, level):
        lx = hit.origin[0] + tile.x
        ly = hit.origin[1] + tile.y
        if tile.owns(lx, ly):
            kept.append(Detection(Rect(lx, ly, c.window_w, c.window_h), level, hit.score, (lx, ly)))
    return kept


def map_to_original(det, factor, img_w, img_h):
    """Scale a level-coordinate window to the original image, clamped inside it."""
    w = min(img_w, math.floor(det.bbox.w * factor + 0.5))
    h = min(img_h, math.floor(det.bbox.h * factor + 0.5))
    x = min(math.floor(det.bbox.x * factor + 0.5), img_w - w)
    y = min(math.floor(det.bbox.y * factor + 0.5), img_h - h)
    return Detection(Rect(x, y, w, h), det.level, det.score, det.origin)


def group_detections(dets, iou_threshold):
    """Greedy score-ordered grouping: drop hits overlapping a stronger kept hit."""
    kept = []
    for d in sorted(dets, key=lambda d: (-d.score, d.sort_key)):
        if all(iou(d.bbox, k.bbox) < iou_threshold for k in kept):
            kept.append(d)
    return sorted(kept, key=lambda d: d.sort_key)


def detect(img, c, cfg=None, budget=None, overlap=config.TILE_OVERLAP,
           step=config.SCAN_STEP, workers=config.DETECT_WORKERS, group_iou=None):
    cfg = cfg or PyramidConfig()
    budget = budget or ScratchBudget(window=max(c.window_w, c.window_h))
    levels = build_pyramid(img, cfg, max(c.window_w, c.window_h))

    jobs = []
    for level, level_img in enumerate(levels):
        tiles = plan_tiles(level_img.width, level_img.height, budget, overlap)
        logger.info("level %d (%dx%d): %d tiles", level, level_img.width, level_img.height, len(tiles))
        jobs.extend((c, level_img, tile, level, step) for tile in tiles)

    per_tile = run_dispatched(jobs, _scan_job, workers)

    found = []
    for hits in per_tile:
        for hit in hits:
            mapped = map_to_original(hit, cfg.factor(hit.level), img.width, img.height)
            if max(mapped.bbox.w, mapped.bbox.h) > cfg.max_detection_px:
                continue
            found.append(mapped)
    found.sort(key=lambda d: d.sort_key)
    if group_iou is not None:
        found = group_detections(found, group_iou)
    logger.info("%d detections over %d levels", len(found), len(levels))
    return found
