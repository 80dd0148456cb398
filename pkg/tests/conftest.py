import csv
import json
import os

import numpy as np
import pytest

from src.geometry import Box
from src.gmaiou import GroundTruth
from src.mask import RasterMask

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def rect_mask(width, height, *rects):
    """Mask with every half-open (x1, y1, x2, y2) rectangle set."""
    bits = np.zeros((height, width), dtype=bool)
    for x1, y1, x2, y2 in rects:
        bits[y1:y2, x1:x2] = True
    return RasterMask(bits)


@pytest.fixture
def strip_gt():
    # 8x8 frame, box [1,7)^2, mask x in [1,4), y in [1,7): 18 of 36 box pixels
    return GroundTruth.from_mask(rect_mask(8, 8, (1, 1, 4, 7)), box=Box(1, 1, 7, 7))


@pytest.fixture
def filled_gt():
    return GroundTruth.from_mask(rect_mask(8, 8, (1, 1, 7, 7)))


@pytest.fixture
def write_json(tmp_path):
    def _write(payload, name="annotations.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)
    return _write
