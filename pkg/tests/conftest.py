import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from cascade import Cascade, HaarFeature, Stage, WeakClassifier, WeightedRect  # noqa: E402
from cnngraph import load_graph  # noqa: E402
from imaging import GrayImage  # noqa: E402
from integral import Rect  # noqa: E402
from mcu_platform import builtin_platform  # noqa: E402
import config  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    def make(w, h):
        return GrayImage(rng.integers(0, 256, size=(h, w), dtype=np.uint8))
    return make


@pytest.fixture(scope="session")
def shipped_graph():
    return load_graph(config.get_graph_path())


@pytest.fixture(scope="session")
def gap9():
    return builtin_platform("gap9")


@pytest.fixture(scope="session")
def gap8():
    return builtin_platform("gap8")


def planted_cascade():
    """
    One-weak cascade without normalization that fires only on a dark 10x10
    block centred in a bright 20x20 window.
    """
    feature = HaarFeature((
        WeightedRect(Rect(0, 0, 20, 20), 1),
        WeightedRect(Rect(5, 5, 10, 10), -4),
    ))
    weak = WeakClassifier(feature, 47000, 1, 1.0, -1.0)
    return Cascade(20, 20, (Stage((weak,), 0.5),), variance_normalization=False)


def planted_image(width=64, height=48, at=(5, 5)):
    px = np.full((height, width), 200, dtype=np.uint8)
    x, y = at
    px[y:y + 10, x:x + 10] = 40
    return GrayImage(px)


@pytest.fixture
def planted():
    return planted_cascade(), planted_image()
