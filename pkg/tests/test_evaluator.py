import pytest

from errors import InputError
from evaluator import EvalReport, GroundTruth, ScoredBox, evaluate, iou, match_detections
from integral import Rect


def max_matching(preds, gts, thr):
    """Largest one-to-one matching by exhaustive search."""
    def best(i, free):
        if i == len(preds):
            return 0
        result = best(i + 1, free)
        for g in free:
            if iou(preds[i].bbox, gts[g]) >= thr:
                result = max(result, 1 + best(i + 1, free - {g}))
        return result
    return best(0, frozenset(range(len(gts))))


def random_instance(rng, jitter=True):
    gts = []
    for _ in range(int(rng.integers(0, 5))):
        gts.append(Rect(int(rng.integers(0, 200)), int(rng.integers(0, 150)), 20, 20))
    preds = []
    for g in gts:
        if rng.random() < 0.8:
            dx, dy = rng.integers(-6, 7, size=2) if jitter else (0, 0)
            preds.append(ScoredBox("a", Rect(max(0, g.x + int(dx)), max(0, g.y + int(dy)), 20, 20),
                                   float(rng.random())))
    for _ in range(int(rng.integers(0, 3))):
        preds.append(ScoredBox("a", Rect(int(rng.integers(0, 200)), int(rng.integers(0, 150)), 20, 20),
                               float(rng.random())))
    return preds, gts


def test_iou():
    a = Rect(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, Rect(10, 0, 10, 10)) == 0.0
    assert iou(a, Rect(5, 0, 10, 10)) == pytest.approx(50 / 150)


def test_greedy_never_beats_optimum_and_usually_equals_it(rng):
    same = 0
    trials = 300
    for _ in range(trials):
        preds, gts = random_instance(rng)
        greedy = match_detections(preds, gts, 0.3).matched
        optimum = max_matching(preds, gts, 0.3)
        assert greedy <= optimum
        same += greedy == optimum
    assert same >= 0.9 * trials


def test_optimum_shrinks_with_threshold(rng):
    for _ in range(100):
        preds, gts = random_instance(rng)
        counts = [max_matching(preds, gts, t) for t in (0.01, 0.2, 0.5, 0.9)]
        assert counts == sorted(counts, reverse=True)


def test_higher_score_matches_first():
    gt = [Rect(0, 0, 20, 20)]
    weak = ScoredBox("a", Rect(0, 0, 20, 20), 0.1)
    strong = ScoredBox("a", Rect(4, 4, 20, 20), 0.9)
    report = match_detections([weak, strong], gt, 0.3)
    assert report.pairs == [(1, 0)]
    assert report.false_positives == 1


def test_each_ground_truth_used_once():
    gt = [Rect(0, 0, 20, 20)]
    preds = [ScoredBox("a", Rect(0, 0, 20, 20), 0.5)] * 3
    assert match_detections(preds, gt).matched == 1


def test_evaluate_pools_images():
    gts = [GroundTruth("a", (Rect(0, 0, 20, 20),)), GroundTruth("b", (Rect(50, 50, 20, 20),))]
    preds = [ScoredBox("a", Rect(1, 1, 20, 20), 1.0), ScoredBox("c", Rect(0, 0, 20, 20), 1.0)]
    report = evaluate(preds, gts, 0.5)
    assert (report.matched, report.total_gt, report.total_pred) == (1, 2, 2)
    assert report.detection_rate == 0.5
    assert report.false_positives == 1


def test_perfect_predictions():
    gts = [GroundTruth("a", (Rect(0, 0, 20, 20), Rect(40, 5, 20, 20))), GroundTruth("b", (Rect(5, 5, 20, 20),))]
    preds = [ScoredBox(g.image_id, box, 1.0) for g in gts for box in g.boxes]
    report = evaluate(preds, gts)
    assert report.detection_rate == 1.0
    assert report.false_positives == 0


def test_empty_inputs():
    assert evaluate([], []).detection_rate == 0.0
    report = evaluate([ScoredBox("a", Rect(0, 0, 5, 5))], [])
    assert report.false_positives == 1


def test_merge_adds_counts():
    merged = EvalReport(1, 2, 3).merge(EvalReport(2, 2, 2))
    assert merged.summary()["matched"] == 3
    assert merged.summary()["false_positives"] == 2


@pytest.mark.parametrize("thr", [0.0, 1.5])
def test_threshold_range(thr):
    with pytest.raises(InputError):
        match_detections([], [], thr)
