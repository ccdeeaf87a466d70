import os

import numpy as np
import pandas as pd

from synth import SynthConfig, make_negative_images, make_positive_windows, make_scene, write_corpus


def test_positive_windows_are_seeded():
    a = make_positive_windows(5, seed=11)
    assert a == make_positive_windows(5, seed=11)
    assert all((w.width, w.height) == (20, 20) for w in a)


def test_moth_darkens_the_window_centre():
    for w in make_positive_windows(10, seed=2):
        px = w.pixels.astype(float)
        border = np.concatenate([px[0], px[-1], px[1:-1, 0], px[1:-1, -1]])
        assert px[8:12, 8:12].mean() < border.mean() - 10


def test_negative_images_have_the_frame_size():
    imgs = make_negative_images(2, seed=4, cfg=SynthConfig(width=64, height=48))
    assert [(i.width, i.height) for i in imgs] == [(64, 48), (64, 48)]


def test_scene_boxes_inside_and_apart():
    img, boxes = make_scene(5, moths=4)
    assert len(boxes) == 4
    for b in boxes:
        assert b.inside(img.width, img.height)
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            assert abs(a.x - b.x) >= 40 or abs(a.y - b.y) >= 40


def test_write_corpus(tmp_path):
    gt = write_corpus(str(tmp_path), positives=3, negatives=1, scenes=2, seed=9,
                      cfg=SynthConfig(width=80, height=60))
    assert len(os.listdir(tmp_path / "pos")) == 3
    assert len(os.listdir(tmp_path / "neg")) == 1
    frame = pd.read_csv(gt)
    assert set(frame["image_id"]) <= {"scene_0000", "scene_0001"}
    assert np.all(frame["w"] == 20)
