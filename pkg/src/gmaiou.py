"""
Mask-over-box ratio and Generalized Mask-aware IoU (GmaIoU).

For an anchor B^, a ground truth with box B and mask M, and a polygon P that
carries the ground truth's energy,

    GmaIoU(B^, P, M) = (|P| / |M|) * |B^ n M| / |B^ u P|

Two polygons are supported: P = B (mask-aware IoU) and P = M (plain IoU
between the anchor box and the mask). Off-mask pixels contribute nothing and
on-mask pixels weigh |P| / |M|; those weights are folded into the closed form
and never stored per pixel.

Every count comes from one integral-image lookup, so each anchor/ground truth
pair costs O(1) after the integral image is built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import geometry
from .geometry import Box, BoxLike, FloatBox
from .mask import (
    IntegralImage,
    RasterMask,
    box_mask_intersection,
    box_mask_intersections,
    build_integral,
    clip_to_frame,
    clipped_areas,
    cover_snap,
    mask_area,
)
from .utils import EmptyMaskError


class GmaMode(str, Enum):
    POLY_IS_BOX = "box"
    POLY_IS_MASK = "mask"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    box: Box
    mask: RasterMask
    integral: IntegralImage
    class_id: int = 0
    annotation_id: Optional[int] = None
    # bbox as stored in the annotation file, kept for diagnostics only
    stored_bbox: Optional[Tuple[float, float, float, float]] = field(default=None)

    def __post_init__(self):
        if mask_area(self.integral) < 1:
            raise EmptyMaskError(f"Ground truth {self.annotation_id} has an empty mask")
        if self.box.x2 > self.mask.width or self.box.y2 > self.mask.height or self.box.x1 < 0 or self.box.y1 < 0:
            raise ValueError(f"Ground truth box {self.box.as_tuple()} leaves the {self.mask.width}x{self.mask.height} frame")
        # MOB(B, M) <= 1 needs every mask pixel inside B
        if box_mask_intersection(self.integral, self.box) != mask_area(self.integral):
            raise ValueError(f"Ground truth box {self.box.as_tuple()} does not contain every mask pixel")

    @classmethod
    def from_mask(cls, mask: RasterMask, class_id: int = 0, box: Optional[Box] = None, **kwargs) -> "GroundTruth":
        """Build a ground truth from its mask; the box defaults to the mask's tight box."""
        tight = mask.tight_box()
        if tight is None:
            raise EmptyMaskError(f"Ground truth {kwargs.get('annotation_id')} has an empty mask")
        if box is None:
            box = tight
        elif not (box.x1 <= tight.x1 and box.y1 <= tight.y1 and box.x2 >= tight.x2 and box.y2 >= tight.y2):
            raise ValueError(f"Box {box.as_tuple()} does not contain every mask pixel (tight box {tight.as_tuple()})")
        # the table only needs to span the mask pixels
        integral = build_integral(mask, region=tight)
        return cls(box=box, mask=mask, integral=integral, class_id=class_id, **kwargs)

    @property
    def area(self) -> int:
        return mask_area(self.integral)


def _anchor_frame(anchor: BoxLike, gt: GroundTruth) -> Tuple[int, int, int, int]:
    if isinstance(anchor, FloatBox):
        snapped = cover_snap(anchor, gt.mask.width, gt.mask.height)
        if snapped is None:
            return 0, 0, 0, 0
        anchor = snapped
    return clip_to_frame(anchor, gt.mask.width, gt.mask.height)


def _polygon_area(gt: GroundTruth, mode: GmaMode) -> int:
    if mode is GmaMode.POLY_IS_BOX:
        return geometry.area(gt.box)
    return gt.area


def mob_ratio(b: BoxLike, gt: GroundTruth) -> float:
    """Fraction of the box's pixels that are on the ground-truth mask."""
    x1, y1, x2, y2 = _anchor_frame(b, gt)
    box_area = (x2 - x1) * (y2 - y1)
    if box_area == 0:
        return 0.0
    return box_mask_intersection(gt.integral, Box(x1, y1, x2, y2)) / box_area


def _terms(anchor: BoxLike, gt: GroundTruth, mode: GmaMode):
    x1, y1, x2, y2 = _anchor_frame(anchor, gt)
    anchor_area = (x2 - x1) * (y2 - y1)
    if anchor_area:
        on_mask = box_mask_intersection(gt.integral, Box(x1, y1, x2, y2))
    else:
        on_mask = 0
    if mode is GmaMode.POLY_IS_BOX:
        with_box = 0
        if anchor_area:
            with_box = geometry.box_intersection_area(Box(x1, y1, x2, y2), gt.box)
        union = anchor_area + geometry.area(gt.box) - with_box
    else:
        union = anchor_area + gt.area - on_mask
    return on_mask, union


def gma_intersection(anchor: BoxLike, gt: GroundTruth, mode: GmaMode) -> float:
    on_mask, _ = _terms(anchor, gt, mode)
    return _polygon_area(gt, mode) / gt.area * on_mask


def gma_union(anchor: BoxLike, gt: GroundTruth, mode: GmaMode) -> float:
    _, union = _terms(anchor, gt, mode)
    return float(union)


def gmaiou_fraction(anchor: BoxLike, gt: GroundTruth, mode: GmaMode) -> Tuple[int, int]:
    """GmaIoU as the exact integer pair (|P| * |B^ n M|, |M| * |B^ u P|)."""
    m_area = gt.area
    if m_area < 1:
        raise EmptyMaskError(f"Ground truth {gt.annotation_id} has an empty mask")
    on_mask, union = _terms(anchor, gt, mode)
    return _polygon_area(gt, mode) * on_mask, m_area * union


def gmaiou(anchor: BoxLike, gt: GroundTruth, mode: GmaMode) -> float:
    num, den = gmaiou_fraction(anchor, gt, mode)
    return num / den


def gmaiou_matrix(anchors: np.ndarray, gts: Sequence[GroundTruth], mode: GmaMode) -> np.ndarray:
    """
    GmaIoU for every (anchor, ground truth) pair of an (N, 4) integer anchor
    array; returns (N, G) float64. Numerators and denominators are formed as
    exact float64 integers before the single division, so each entry equals
    gmaiou() on the same pair.
    """
    anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 4)
    out = np.zeros((anchors.shape[0], len(gts)), dtype=np.float64)
    for g, gt in enumerate(gts):
        m_area = gt.area
        if m_area < 1:
            raise EmptyMaskError(f"Ground truth {gt.annotation_id} has an empty mask")
        w, h = gt.mask.width, gt.mask.height
        on_mask = box_mask_intersections(gt.integral, anchors)
        anchor_area = clipped_areas(anchors, w, h)
        if mode is GmaMode.POLY_IS_BOX:
            clipped = np.stack([
                np.clip(anchors[:, 0], 0, w), np.clip(anchors[:, 1], 0, h),
                np.clip(anchors[:, 2], 0, w), np.clip(anchors[:, 3], 0, h),
            ], axis=1)
            with_box = geometry.pairwise_intersection(clipped, np.asarray([gt.box.as_tuple()]))[:, 0]
            union = anchor_area + geometry.area(gt.box) - with_box
        else:
            union = anchor_area + m_area - on_mask
        num = on_mask.astype(np.float64) * _polygon_area(gt, mode)
        den = np.asarray(union, dtype=np.float64) * m_area
        out[:, g] = num / den
    return out


MeasureName = str
SCALAR_MEASURES = ("iou", "gmaiou-b", "gmaiou-m")


def _scalar_measure(name: MeasureName, anchor: BoxLike, gt: GroundTruth) -> float:
    if name == "iou":
        if isinstance(anchor, FloatBox):
            snapped = cover_snap(anchor, gt.mask.width, gt.mask.height)
            if snapped is None:
                return 0.0
            anchor = snapped
        return geometry.iou(anchor, gt.box)
    if name == "gmaiou-b":
        return gmaiou(anchor, gt, GmaMode.POLY_IS_BOX)
    if name == "gmaiou-m":
        return gmaiou(anchor, gt, GmaMode.POLY_IS_MASK)
    raise ValueError(f"Unknown measure {name!r}; expected one of {SCALAR_MEASURES}")


def histogram2d_counts(xs, ys, bins: int, x_range=(0.0, 1.0), y_range=(0.0, 1.0)) -> np.ndarray:
    """(bins, bins) int64 counts; cell [i, j] holds x-bin i and y-bin j."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    counts, _, _ = np.histogram2d(xs, ys, bins=bins, range=[x_range, y_range])
    return counts.astype(np.int64)


def joint_histogram(
    pairs: Sequence[Tuple[Union[Box, FloatBox], GroundTruth]],
    measure_a: MeasureName,
    measure_b: MeasureName,
    bins: int,
) -> np.ndarray:
    """Anchor counts per (measure_a bin, measure_b bin) over [0, 1] x [0, 1]."""
    for name in (measure_a, measure_b):
        if name not in SCALAR_MEASURES:
            raise ValueError(f"Unknown measure {name!r}; expected one of {SCALAR_MEASURES}")
    xs = [_scalar_measure(measure_a, anchor, gt) for anchor, gt in pairs]
    ys = [_scalar_measure(measure_b, anchor, gt) for anchor, gt in pairs]
    return histogram2d_counts(xs, ys, bins)
