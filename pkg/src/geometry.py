"""
Axis-aligned box algebra and the box-only proximity measures.

Boxes use the half-open pixel convention: Box(x1, y1, x2, y2) covers the
pixels x in [x1, x2), y in [y1, y2). Scalar functions take Box or FloatBox;
the ``pairwise_*`` kernels take (N, 4) / (G, 4) arrays in the same x1, y1,
x2, y2 layout and return (N, G) matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np


@dataclass(frozen=True)
class Box:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"Box needs x2 > x1 and y2 > y1, got {self.as_tuple()}")

    @classmethod
    def from_xywh(cls, x: int, y: int, w: int, h: int) -> "Box":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class FloatBox:
    """Real-valued box, e.g. a generated anchor before it is snapped to pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"FloatBox needs x2 > x1 and y2 > y1, got {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


BoxLike = Union[Box, FloatBox]


def area(b: BoxLike):
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def box_intersection_area(a: BoxLike, b: BoxLike):
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def _enclosing(a: BoxLike, b: BoxLike):
    return (min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def center(b: BoxLike) -> Tuple[float, float]:
    return ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)


def iou(a: BoxLike, b: BoxLike) -> float:
    inter = box_intersection_area(a, b)
    union = area(a) + area(b) - inter
    return float(inter) / float(union)


def giou(a: BoxLike, b: BoxLike) -> float:
    """
    Generalized IoU: IoU - (|C| - |A u B|) / |C|, with C the smallest box
    enclosing both inputs.
    """
    inter = box_intersection_area(a, b)
    union = area(a) + area(b) - inter
    ex1, ey1, ex2, ey2 = _enclosing(a, b)
    enclosing = (ex2 - ex1) * (ey2 - ey1)
    return float(inter) / union - float(enclosing - union) / enclosing


def diou(a: BoxLike, b: BoxLike) -> float:
    """
    Distance IoU: IoU - d^2 / c^2, with d the distance between the box
    centres and c the diagonal of the enclosing box.
    """
    (ax, ay), (bx, by) = center(a), center(b)
    ex1, ey1, ex2, ey2 = _enclosing(a, b)
    d2 = (ax - bx) ** 2 + (ay - by) ** 2
    c2 = float((ex2 - ex1) ** 2 + (ey2 - ey1) ** 2)
    return iou(a, b) - d2 / c2


def boxes_to_array(boxes) -> np.ndarray:
    """Stack Box/FloatBox objects (or 4-tuples) into an (N, 4) float64 array."""
    rows = [b.as_tuple() if hasattr(b, "as_tuple") else tuple(b) for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def box_areas(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def pairwise_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    return wh[..., 0] * wh[..., 1]


def _pairwise_union(a: np.ndarray, b: np.ndarray, inter: np.ndarray) -> np.ndarray:
    return box_areas(a)[:, None] + box_areas(b)[None, :] - inter


def _pairwise_enclosing(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lt = np.minimum(a[:, None, :2], b[None, :, :2])
    rb = np.maximum(a[:, None, 2:], b[None, :, 2:])
    return rb - lt


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = pairwise_intersection(a, b)
    return inter / _pairwise_union(a, b, inter)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = pairwise_intersection(a, b)
    union = _pairwise_union(a, b, inter)
    wh = _pairwise_enclosing(a, b)
    enclosing = wh[..., 0] * wh[..., 1]
    return inter / union - (enclosing - union) / enclosing


def pairwise_diou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ca = (a[:, :2] + a[:, 2:]) / 2.0
    cb = (b[:, :2] + b[:, 2:]) / 2.0
    d2 = ((ca[:, None, :] - cb[None, :, :]) ** 2).sum(axis=-1)
    wh = _pairwise_enclosing(a, b)
    c2 = (wh ** 2).sum(axis=-1)
    return pairwise_iou(a, b) - d2 / c2
