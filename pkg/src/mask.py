"""
Binary raster masks, polygon rasterisation and integral images.

RasterMask.bits is an (height, width) bool array indexed [y, x].
IntegralImage.table is (width + 1, height + 1) int64 indexed [x, y] over a
region whose top-left pixel is `origin`: table[i, j] counts the set mask pixels
in [x0, x0 + i) x [y0, y0 + j). The region may be a crop of the frame as long
as it holds every set pixel; lookups outside it count nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import Box, BoxLike, FloatBox


@dataclass(frozen=True)
class Polygon:
    vertices: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError(f"Polygon needs at least 3 vertices, got {len(verts)}")
        if not all(math.isfinite(v) for xy in verts for v in xy):
            raise ValueError("Polygon vertices must be finite")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_flat(cls, coords: Sequence[float]) -> "Polygon":
        """COCO layout: [x1, y1, x2, y2, ...]."""
        if len(coords) % 2:
            raise ValueError(f"Flat polygon needs an even number of coordinates, got {len(coords)}")
        return cls(tuple(zip(coords[0::2], coords[1::2])))


@dataclass(frozen=True, eq=False)
class RasterMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"RasterMask needs a non-empty 2-D grid, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def zeros(cls, width: int, height: int) -> "RasterMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_box(cls, box: Box, width: int, height: int) -> "RasterMask":
        bits = np.zeros((height, width), dtype=bool)
        bits[max(box.y1, 0):max(box.y2, 0), max(box.x1, 0):max(box.x2, 0)] = True
        return cls(bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def tight_box(self) -> Optional[Box]:
        """Smallest Box holding every set pixel, or None for an empty mask."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        if rows.size == 0:
            return None
        cols = np.flatnonzero(self.bits.any(axis=0))
        return Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


@dataclass(frozen=True, eq=False)
class IntegralImage:
    table: np.ndarray
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        table = np.array(self.table, dtype=np.int64)
        if table.ndim != 2 or table.shape[0] < 2 or table.shape[1] < 2:
            raise ValueError(f"IntegralImage table must be at least 2x2, got shape {table.shape}")
        x0, y0 = (int(v) for v in self.origin)
        if x0 < 0 or y0 < 0:
            raise ValueError(f"IntegralImage origin must be non-negative, got {self.origin}")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "origin", (x0, y0))

    @property
    def width(self) -> int:
        return self.table.shape[0] - 1

    @property
    def height(self) -> int:
        return self.table.shape[1] - 1

    @property
    def x0(self) -> int:
        return self.origin[0]

    @property
    def y0(self) -> int:
        return self.origin[1]


def _fill_even_odd(poly: Polygon, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    pts = np.asarray(poly.vertices, dtype=np.float64)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    # horizontal edges never cross a scanline through pixel centres
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    if x0.size == 0:
        return out

    row_lo = max(0, math.ceil(pts[:, 1].min() - 0.5))
    row_hi = min(height, math.floor(pts[:, 1].max() - 0.5) + 1)
    xc = np.arange(width, dtype=np.float64) + 0.5
    for row in range(row_lo, row_hi):
        yc = row + 0.5
        # half-open in y so a shared vertex is counted once
        crosses = ((y0 <= yc) & (y1 > yc)) | ((y1 <= yc) & (y0 > yc))
        if not crosses.any():
            continue
        t = (yc - y0[crosses]) / (y1[crosses] - y0[crosses])
        xs = np.sort(x0[crosses] + t * (x1[crosses] - x0[crosses]))
        to_the_right = xs.size - np.searchsorted(xs, xc, side="right")
        out[row] = (to_the_right % 2) == 1
    return out


def rasterize(poly: Union[Polygon, Iterable[Polygon]], width: int, height: int) -> RasterMask:
    """
    Pixel (x, y) is set iff its centre (x + 0.5, y + 0.5) is inside the polygon
    under the even-odd rule. A sequence of polygons is rasterised part by part
    and OR-merged, the way COCO stores a disconnected instance.
    """
    if width < 1 or height < 1:
        raise ValueError(f"Frame must be at least 1x1, got {width}x{height}")
    parts = [poly] if isinstance(poly, Polygon) else list(poly)
    bits = np.zeros((height, width), dtype=bool)
    for part in parts:
        bits |= _fill_even_odd(part, width, height)
    return RasterMask(bits)


def build_integral(mask: RasterMask, region: Optional[Box] = None) -> IntegralImage:
    """
    Prefix-sum table over the whole frame, or over `region` only. A region must
    lie inside the frame and hold every set pixel of the mask.
    """
    if region is None:
        bits, origin = mask.bits, (0, 0)
    else:
        if region.x1 < 0 or region.y1 < 0 or region.x2 > mask.width or region.y2 > mask.height:
            raise ValueError(f"Region {region.as_tuple()} leaves the {mask.width}x{mask.height} frame")
        bits = mask.bits[region.y1:region.y2, region.x1:region.x2]
        if np.count_nonzero(bits) != mask.pixel_count:
            raise ValueError(f"Region {region.as_tuple()} does not hold every set pixel of the mask")
        origin = (region.x1, region.y1)
    table = np.zeros((bits.shape[1] + 1, bits.shape[0] + 1), dtype=np.int64)
    table[1:, 1:] = bits.T.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return IntegralImage(table, origin)


def mask_area(ii: IntegralImage) -> int:
    return int(ii.table[-1, -1])


def clip_to_frame(b: BoxLike, width: int, height: int) -> Tuple[int, int, int, int]:
    """
    Integer box clipped to [0, width] x [0, height]; may come back empty.
    A FloatBox is cover-snapped first.
    """
    if isinstance(b, FloatBox):
        snapped = cover_snap(b, width, height)
        if snapped is None:
            return 0, 0, 0, 0
        b = snapped
    x1 = min(max(int(b.x1), 0), width)
    y1 = min(max(int(b.y1), 0), height)
    x2 = min(max(int(b.x2), x1), width)
    y2 = min(max(int(b.y2), y1), height)
    return x1, y1, x2, y2


def cover_snap(b: BoxLike, width: int, height: int) -> Optional[Box]:
    """
    Clip a (possibly fractional) box to the frame, then round x1, y1 down and
    x2, y2 up. Returns None when nothing of the box is left inside the frame.
    """
    x1 = max(float(b.x1), 0.0)
    y1 = max(float(b.y1), 0.0)
    x2 = min(float(b.x2), float(width))
    y2 = min(float(b.y2), float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return Box(math.floor(x1), math.floor(y1), math.ceil(x2), math.ceil(y2))


def cover_snap_array(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    """Vectorised cover_snap; rows left empty by clipping come back zero-area."""
    boxes = np.asarray(boxes, dtype=np.float64)
    lo = np.array([0.0, 0.0, 0.0, 0.0])
    hi = np.array([width, height, width, height], dtype=np.float64)
    clipped = np.clip(boxes, lo, hi)
    snapped = np.empty(clipped.shape, dtype=np.int64)
    snapped[:, :2] = np.floor(clipped[:, :2])
    snapped[:, 2:] = np.ceil(clipped[:, 2:])
    snapped[:, 2:] = np.maximum(snapped[:, 2:], snapped[:, :2])
    return snapped


def box_mask_intersection(ii: IntegralImage, b: BoxLike) -> int:
    x1, y1, x2, y2 = clip_to_frame(b, ii.x0 + ii.width, ii.y0 + ii.height)
    # into table coordinates; the clamp keeps x1 <= x2 and y1 <= y2
    x1, x2 = (min(max(v - ii.x0, 0), ii.width) for v in (x1, x2))
    y1, y2 = (min(max(v - ii.y0, 0), ii.height) for v in (y1, y2))
    t = ii.table
    return int(t[x2, y2] + t[x1, y1] - t[x2, y1] - t[x1, y2])


def box_mask_intersections(ii: IntegralImage, boxes: np.ndarray) -> np.ndarray:
    """box_mask_intersection for every row of an (N, 4) integer box array."""
    boxes = np.asarray(boxes, dtype=np.int64)
    x1 = np.clip(boxes[:, 0] - ii.x0, 0, ii.width)
    y1 = np.clip(boxes[:, 1] - ii.y0, 0, ii.height)
    x2 = np.clip(boxes[:, 2] - ii.x0, x1, ii.width)
    y2 = np.clip(boxes[:, 3] - ii.y0, y1, ii.height)
    t = ii.table
    return t[x2, y2] + t[x1, y1] - t[x2, y1] - t[x1, y2]


def clipped_areas(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.int64)
    x1 = np.clip(boxes[:, 0], 0, width)
    y1 = np.clip(boxes[:, 1], 0, height)
    x2 = np.clip(boxes[:, 2], x1, width)
    y2 = np.clip(boxes[:, 3], y1, height)
    return (x2 - x1) * (y2 - y1)
