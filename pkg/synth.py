"""
Synthetic trap images: dark elliptical moth blobs with texture noise on
smooth gradient backgrounds. Stands in for the private field datasets.
"""
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

import config
from imaging import GrayImage, write_pgm
from integral import Rect

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 320
    height: int = 240
    window: int = config.WINDOW_SIZE
    texture_sigma: float = 6.0
    # moth half-axes as fractions of the window side
    min_axis: float = 0.22
    max_axis: float = 0.38


def _background(rng, w, h):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(140, 210)
    gx, gy = rng.uniform(-40, 40, size=2)
    return base + gx * xx / max(w - 1, 1) + gy * yy / max(h - 1, 1)


def _texture(rng, shape, sigma):
    noise = rng.normal(0.0, sigma, size=shape)
    # light 3x3 box blur keeps the grain from looking like sensor noise
    padded = np.pad(noise, 1, mode="edge")
    out = np.zeros(shape)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + shape[0], dx:dx + shape[1]]
    return out / 3.0


def paint_moth(canvas, cx, cy, side, rng, cfg=SynthConfig()):
    """Darken an elliptical blob with a lighter wing band, centred at (cx, cy)."""
    h, w = canvas.shape
    rx = side * rng.uniform(cfg.min_axis, cfg.max_axis)
    ry = side * rng.uniform(cfg.min_axis, cfg.max_axis)
    angle = rng.uniform(0, np.pi)
    darkness = rng.uniform(70, 120)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = (dx * np.cos(angle) + dy * np.sin(angle)) / rx
    v = (-dx * np.sin(angle) + dy * np.cos(angle)) / ry
    r2 = u * u + v * v
    body = np.clip(1.2 - r2, 0.0, 1.0)
    band = np.exp(-((np.abs(u) - 0.55) ** 2) / 0.02) * (r2 < 1)
    canvas -= darkness * body
    canvas += 0.3 * darkness * band
    return canvas


def _finish(canvas):
    return GrayImage(np.clip(np.floor(canvas + 0.5), 0, 255))


def make_positive_windows(count, seed, cfg=SynthConfig()):
    """Window-sized patches, each with one moth near the centre."""
    rng = np.random.default_rng(seed)
    s = cfg.window
    out = []
    for _ in range(count):
        canvas = _background(rng, s, s) + _texture(rng, (s, s), cfg.texture_sigma)
        jitter = rng.uniform(-1.0, 1.0, size=2)
        paint_moth(canvas, (s - 1) / 2 + jitter[0], (s - 1) / 2 + jitter[1], s, rng, cfg)
        out.append(_finish(canvas))
    return out


def make_negative_images(count, seed, cfg=SynthConfig()):
    """Moth-free backgrounds with the same texture statistics plus clutter."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        canvas = _background(rng, cfg.width, cfg.height)
        canvas += _texture(rng, canvas.shape, cfg.texture_sigma)
        # straight dark strokes mimic glue-board edges and debris
        for _ in range(rng.integers(2, 6)):
            y = rng.integers(0, cfg.height)
            x0, x1 = sorted(rng.integers(0, cfg.width, size=2))
            canvas[y:y + rng.integers(1, 4), x0:x1] -= rng.uniform(30, 80)
        out.append(_finish(canvas))
    return out


def make_scene(seed, moths=3, cfg=SynthConfig()):
    """A full frame with non-overlapping moths; returns the image and their boxes."""
    rng = np.random.default_rng(seed)
    canvas = _background(rng, cfg.width, cfg.height)
    canvas += _texture(rng, canvas.shape, cfg.texture_sigma)
    s = cfg.window
    boxes = []
    attempts = 0
    while len(boxes) < moths and attempts < 1000:
        attempts += 1
        x = int(rng.integers(0, cfg.width - s + 1))
        y = int(rng.integers(0, cfg.height - s + 1))
        box = Rect(x, y, s, s)
        if any(abs(b.x - x) < 2 * s and abs(b.y - y) < 2 * s for b in boxes):
            continue
        paint_moth(canvas, x + (s - 1) / 2, y + (s - 1) / 2, s, rng, cfg)
        boxes.append(box)
    return _finish(canvas), boxes


def write_corpus(out_dir, positives=1000, negatives=50, scenes=10, seed=config.TRAIN_SEED,
                 cfg=SynthConfig()):
    """
    Write pos/, neg/ and scenes/ folders of PGM files plus scenes/ground_truth.csv.
    Returns the path of the ground-truth file.
    """
    pos_dir = os.path.join(out_dir, "pos")
    neg_dir = os.path.join(out_dir, "neg")
    scene_dir = os.path.join(out_dir, "scenes")
    for d in (pos_dir, neg_dir, scene_dir):
        os.makedirs(d, exist_ok=True)

    for i, img in enumerate(make_positive_windows(positives, seed, cfg)):
        write_pgm(os.path.join(pos_dir, f"pos_{i:05d}.pgm"), img)
    for i, img in enumerate(make_negative_images(negatives, seed + 1, cfg)):
        write_pgm(os.path.join(neg_dir, f"neg_{i:04d}.pgm"), img)

    rows = []
    for i in range(scenes):
        image_id = f"scene_{i:04d}"
        img, boxes = make_scene(seed + 2 + i, cfg=cfg)
        write_pgm(os.path.join(scene_dir, f"{image_id}.pgm"), img)
        rows.extend({"image_id": image_id, "x": b.x, "y": b.y, "w": b.w, "h": b.h} for b in boxes)
    gt_path = os.path.join(scene_dir, "ground_truth.csv")
    pd.DataFrame(rows, columns=["image_id", "x", "y", "w", "h"]).to_csv(gt_path, index=False)
    logger.info("synthetic corpus: %d positives, %d negatives, %d scenes in %s",
                positives, negatives, scenes, out_dir)
    return gt_path
