import numpy as np
import pytest

from cascade import Cascade, Stage
from conftest import planted_cascade, planted_image
from detector import (AccountingMode, Detection, PyramidConfig, ScratchBudget, build_pyramid, detect,
                      group_detections, level_dims, map_to_original, plan_tiles, scan_tile)
from errors import BudgetTooSmall, InputError, WindowLargerThanImage
from integral import Rect
from test_cascade import random_cascade, two_rect

UNLIMITED = ScratchBudget(bytes=10 ** 8, reserved_bytes=0)


def untiled_reference(img, c, cfg, step=1):
    """Scan every level as a single raster, no tiling."""
    out = []
    for level, level_img in enumerate(build_pyramid(img, cfg, c.window_w)):
        for hit in scan_tile(c, level_img, step, level=level):
            mapped = map_to_original(hit, cfg.factor(level), img.width, img.height)
            if max(mapped.bbox.w, mapped.bbox.h) <= cfg.max_detection_px:
                out.append(mapped)
    return sorted(out, key=lambda d: d.sort_key)


class TestPyramid:
    def test_level_dimensions(self):
        assert level_dims(320, 240, PyramidConfig()) == [
            (320, 240), (290, 218), (264, 198), (240, 180), (218, 163)]

    def test_stops_below_window(self, random_image, caplog):
        levels = build_pyramid(random_image(24, 23), PyramidConfig(num_levels=5))
        assert [(lv.width, lv.height) for lv in levels] == [(24, 23), (21, 20)]
        assert "pyramid stops" in caplog.text

    def test_image_smaller_than_window(self, random_image):
        with pytest.raises(WindowLargerThanImage):
            build_pyramid(random_image(19, 40), PyramidConfig())

    @pytest.mark.parametrize("kwargs", [{"scale_factor": 1.0}, {"num_levels": 0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(InputError):
            PyramidConfig(**kwargs)


class TestTilePlan:
    def test_default_budget_on_qvga(self):
        tiles = plan_tiles(320, 240, ScratchBudget())
        assert [t.x for t in tiles] == [0, 80, 160, 240]
        assert all(t.h == 240 and t.y == 0 for t in tiles)
        assert [t.w for t in tiles] == [100, 100, 100, 80]
        assert [(t.core.x, t.core.right) for t in tiles] == [(0, 80), (80, 160), (160, 240), (240, 320)]

    @pytest.mark.parametrize("mode", list(AccountingMode))
    @pytest.mark.parametrize("size", [(320, 240), (218, 163), (64, 21)])
    def test_tiles_fit_and_cores_partition(self, mode, size):
        budget = ScratchBudget(bytes=30_000, mode=mode, reserved_bytes=3_560)
        w, h = size
        tiles = plan_tiles(w, h, budget)
        owned = [[0] * w for _ in range(h)]
        for t in tiles:
            assert budget.tile_bytes(t.w, t.h) <= budget.usable
            assert t.x + t.w <= w and t.y + t.h <= h
            for y in range(t.core.y, t.core.bottom):
                for x in range(t.core.x, t.core.right):
                    owned[y][x] += 1
        assert all(v == 1 for row in owned for v in row)

    def test_budget_below_one_window(self):
        with pytest.raises(BudgetTooSmall):
            ScratchBudget(bytes=1600)

    def test_reserved_bytes_exhaust_budget(self):
        with pytest.raises(BudgetTooSmall):
            plan_tiles(320, 240, ScratchBudget(bytes=2_000, reserved_bytes=1_990))

    def test_negative_overlap(self):
        with pytest.raises(InputError):
            plan_tiles(320, 240, ScratchBudget(), overlap=-1)

    def test_every_window_inside_some_tile(self, rng):
        for _ in range(20):
            w, h = int(rng.integers(20, 200)), int(rng.integers(20, 150))
            mode = list(AccountingMode)[int(rng.integers(0, 3))]
            budget = ScratchBudget(bytes=int(rng.integers(11_000, 40_000)), mode=mode)
            covered = np.zeros((h - 19, w - 19), dtype=bool)
            for t in plan_tiles(w, h, budget, overlap=19):
                covered[t.y:t.y + t.h - 19, t.x:t.x + t.w - 19] = True
            assert covered.all()


class TestScanTile:
    @pytest.mark.parametrize("step, expected", [(1, 25), (2, 9), (5, 1)])
    def test_accepting_cascade_hits_every_origin(self, random_image, step, expected):
        c = Cascade(20, 20, (Stage((two_rect(),), -10.0),), False)
        hits = scan_tile(c, random_image(24, 24), step)
        assert len(hits) == expected
        assert {h.origin for h in hits} == {(x, y) for y in range(0, 5, step) for x in range(0, 5, step)}

    def test_rejecting_cascade_finds_nothing(self, random_image):
        c = Cascade(20, 20, (Stage((two_rect(),), 10.0),), False)
        assert scan_tile(c, random_image(24, 24)) == []

    def test_tile_smaller_than_window(self, random_image):
        c = Cascade(20, 20, (Stage((two_rect(),), -10.0),), False)
        assert scan_tile(c, random_image(19, 30)) == []


class TestDetect:
    def test_planted_target_found_once(self, planted):
        cascade, image = planted
        found = detect(image, cascade)
        assert len(found) == 1
        assert found[0].bbox == Rect(0, 0, 20, 20)
        assert found[0].level == 0

    @pytest.mark.parametrize("at", [(25, 17), (44, 28), (61, 8)])
    def test_planted_target_across_tile_seams(self, at):
        image = planted_image(width=90, height=50, at=at)
        budget = ScratchBudget(bytes=5_000, reserved_bytes=0)
        found = detect(image, planted_cascade(), budget=budget, overlap=19)
        assert [d.bbox for d in found] == [Rect(at[0] - 5, at[1] - 5, 20, 20)]

    def test_tiling_matches_untiled_scan(self, rng, random_image):
        mode = AccountingMode.II_PLUS_INPUT_PLUS_SQUARES
        bpp = mode.bytes_per_pixel
        cfg = PyramidConfig()
        for trial in range(200):
            c = random_cascade(rng, stages=2)
            w, h = int(rng.integers(64, 97)), int(rng.integers(64, 81))
            img = random_image(w, h)
            overlap = int(rng.choice([19, 20, 27]))
            step = int(rng.choice([1, 2, 3]))
            if trial % 2:
                # full-height columns narrower than the raster
                budget = ScratchBudget(bytes=bpp * h * int(rng.integers(28, w - 8)), reserved_bytes=0,
                                       mode=mode)
                tiles = plan_tiles(w, h, budget, overlap)
                assert len({t.x for t in tiles}) > 1 and all(t.h == h for t in tiles)
            else:
                # too small for a full-height column, so tiles stack in rows
                budget = ScratchBudget(bytes=bpp * int(rng.integers(28 * 28, 1200)), reserved_bytes=0,
                                       mode=mode)
                tiles = plan_tiles(w, h, budget, overlap)
                assert len({t.y for t in tiles}) > 1
            expected = untiled_reference(img, c, cfg, step)
            assert detect(img, c, cfg, budget, overlap, step, workers=1) == expected
            assert detect(img, c, cfg, UNLIMITED, overlap, step, workers=1) == expected

    def test_worker_count_does_not_change_output(self, rng, random_image):
        c = random_cascade(rng)
        img = random_image(96, 64)
        budget = ScratchBudget(bytes=6_000, reserved_bytes=0)
        assert detect(img, c, budget=budget, workers=1) == detect(img, c, budget=budget, workers=8)

    def test_output_order(self, rng, random_image):
        found = detect(random_image(80, 60), random_cascade(rng), workers=2)
        assert found == sorted(found, key=lambda d: d.sort_key)

    def test_scan_step_must_be_positive(self, planted):
        cascade, image = planted
        with pytest.raises(InputError):
            detect(image, cascade, step=0)


def test_map_to_original_scales_and_clamps():
    det = Detection(Rect(10, 10, 20, 20), 2, 1.0, (10, 10))
    mapped = map_to_original(det, 1.21, 320, 240)
    assert mapped.bbox == Rect(12, 12, 24, 24)
    edge = map_to_original(Detection(Rect(199, 143, 20, 20), 4, 1.0), 1.4641, 320, 240)
    assert edge.bbox.right <= 320 and edge.bbox.bottom <= 240


def test_grouping_keeps_strongest():
    a = Detection(Rect(0, 0, 20, 20), 0, 2.0, (0, 0))
    b = Detection(Rect(2, 0, 20, 20), 0, 1.0, (2, 0))
    c = Detection(Rect(60, 0, 20, 20), 0, 0.5, (60, 0))
    assert group_detections([b, c, a], 0.3) == [a, c]
