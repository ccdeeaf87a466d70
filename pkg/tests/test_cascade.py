import json

import numpy as np
import pytest

from cascade import (Cascade, HaarFeature, Stage, WeakClassifier, WeightedRect, cascade_from_dict,
                     cascade_to_dict, eval_window, load_cascade, save_cascade, score_windows,
                     window_norm, window_norms)
from conftest import planted_cascade
from errors import (CascadeSchemaError, EmptyCascade, EmptyStage, MissingField, RectOutOfBounds,
                    RectOutOfWindow, UnsupportedVersion)
from imaging import GrayImage
from integral import Rect, WindowBatch, build_integral


def two_rect(x=0, y=0, t=0, polarity=1):
    f = HaarFeature((WeightedRect(Rect(x, y, 4, 4), 1), WeightedRect(Rect(x + 4, y, 4, 4), -1)))
    return WeakClassifier(f, t, polarity, 1.0, -1.0)


def three_rect(x=0, y=0, t=0, polarity=1):
    f = HaarFeature((WeightedRect(Rect(x, y, 2, 4), 1), WeightedRect(Rect(x + 2, y, 2, 4), -2),
                     WeightedRect(Rect(x + 4, y, 2, 4), 1)))
    return WeakClassifier(f, t, polarity, 0.5, -0.5)


def random_cascade(rng, stages=4, normalize=True):
    out = []
    for _ in range(stages):
        weak = []
        for _ in range(int(rng.integers(1, 6))):
            make = two_rect if rng.random() < 0.5 else three_rect
            weak.append(make(int(rng.integers(0, 12)), int(rng.integers(0, 16)),
                             int(rng.integers(-60, 60)), int(rng.choice([-1, 1]))))
        out.append(Stage(tuple(weak), float(rng.uniform(-1.0, 0.5))))
    return Cascade(20, 20, tuple(out), normalize)


class TestModel:
    def test_size_accounting(self):
        stages = []
        # 26 two-rect and 98 three-rect weak classifiers over 15 stages
        kinds = [two_rect] * 26 + [three_rect] * 98
        for s in range(15):
            chunk = kinds[s::15]
            stages.append(Stage(tuple(k() for k in chunk), 0.0))
        c = Cascade(20, 20, tuple(stages))
        assert c.weak_count == 124
        assert c.size() == 3560

    def test_feature_must_be_zero_mean(self):
        with pytest.raises(CascadeSchemaError):
            HaarFeature((WeightedRect(Rect(0, 0, 4, 4), 1), WeightedRect(Rect(4, 0, 4, 4), -2)))

    def test_empty_structures(self):
        with pytest.raises(EmptyStage):
            Stage((), 0.0)
        with pytest.raises(EmptyCascade):
            Cascade(20, 20, ())

    def test_truncated_keeps_prefix(self, rng):
        c = random_cascade(rng, stages=5)
        short = c.truncated(2)
        assert short.stages == c.stages[:2]
        assert short.size() < c.size()


class TestEvaluation:
    def test_planted_window_accepted(self, planted):
        cascade, image = planted
        ii = build_integral(image)
        hit = eval_window(cascade, ii, (0, 0))
        assert hit.accepted and hit.stage == 1
        assert hit.score == pytest.approx(0.5)
        miss = eval_window(cascade, ii, (1, 0))
        assert not miss.accepted and miss.stage == 0

    def test_window_must_fit(self, planted):
        cascade, image = planted
        with pytest.raises(RectOutOfBounds):
            eval_window(cascade, build_integral(image), (50, 0))

    @pytest.mark.parametrize("normalize", [True, False])
    def test_batch_agrees_with_scalar(self, rng, random_image, normalize):
        c = random_cascade(rng, normalize=normalize)
        img = random_image(48, 40)
        ii = build_integral(img, with_squares=True)
        ys, xs = np.mgrid[0:21, 0:29]
        batch = WindowBatch.from_integral(ii, xs.ravel(), ys.ravel())
        result = score_windows(c, batch)
        for i, (x, y) in enumerate(zip(xs.ravel(), ys.ravel())):
            one = eval_window(c, ii, (int(x), int(y)))
            assert result.accepted[i] == one.accepted
            assert result.stage[i] == one.stage
            assert result.score[i] == pytest.approx(one.score, abs=1e-9)

    def test_low_contrast_norm_is_not_clamped(self):
        c = random_cascade(np.random.default_rng(5))
        px = np.full((20, 20), 100, dtype=np.uint8)
        px[7, 3] = 101
        ii = build_integral(GrayImage(px), with_squares=True)
        expected = np.sqrt(399) / 400
        assert window_norm(c, ii, (0, 0)) == pytest.approx(expected)
        batch = WindowBatch.from_integral(ii, [0], [0])
        assert window_norms(batch, 20, 20, True)[0] == window_norm(c, ii, (0, 0))

    def test_flat_window_norm_is_one(self):
        c = random_cascade(np.random.default_rng(5))
        ii = build_integral(GrayImage(np.full((20, 20), 90, dtype=np.uint8)), with_squares=True)
        batch = WindowBatch.from_integral(ii, [0], [0])
        assert score_windows(c, batch).stage[0] == eval_window(c, ii, (0, 0)).stage


class TestCascadeFile:
    def test_save_and_load(self, tmp_path, rng):
        c = random_cascade(rng)
        path = tmp_path / "cascade.json"
        save_cascade(c, path)
        assert load_cascade(path) == c

    def test_version_checked(self):
        data = cascade_to_dict(planted_cascade())
        data["version"] = 7
        with pytest.raises(UnsupportedVersion):
            cascade_from_dict(data)

    def test_missing_field_named(self):
        data = cascade_to_dict(planted_cascade())
        del data["stages"][0]["weak"][0]["polarity"]
        with pytest.raises(MissingField, match="polarity"):
            cascade_from_dict(data)

    def test_rect_outside_window(self):
        data = cascade_to_dict(planted_cascade())
        data["stages"][0]["weak"][0]["rects"][1]["x"] = 15
        with pytest.raises(RectOutOfWindow):
            cascade_from_dict(data)

    def test_empty_stage_list(self):
        data = cascade_to_dict(planted_cascade())
        data["stages"] = []
        with pytest.raises(EmptyCascade):
            cascade_from_dict(data)

    def test_not_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{stages: ")
        with pytest.raises(CascadeSchemaError):
            load_cascade(path)

    def test_file_is_plain_json(self, tmp_path):
        path = tmp_path / "c.json"
        save_cascade(planted_cascade(), path)
        data = json.loads(path.read_text())
        assert data["window"] == {"w": 20, "h": 20}
