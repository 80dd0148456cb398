"""
Slow, obviously-correct reference implementations.

Nothing here touches an integral image: counts come from enumerating pixels.
The fast path in gmaiou/mask is audited against these, both by the test suite
and by the `check` subcommand; `bench` times one against the other.
"""
from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Box
from .gmaiou import GmaMode, GroundTruth, gmaiou_fraction, gmaiou_matrix
from .mask import (
    Polygon,
    RasterMask,
    box_mask_intersection,
    clip_to_frame,
    rasterize,
)
from .utils import EmptyMaskError, utc_now

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PixelSet:
    pixels: FrozenSet[Tuple[int, int]]
    width: int
    height: int

    def __post_init__(self):
        bad = [p for p in self.pixels if not (0 <= p[0] < self.width and 0 <= p[1] < self.height)]
        if bad:
            raise ValueError(f"{len(bad)} pixel(s) outside the {self.width}x{self.height} frame, e.g. {bad[0]}")

    def __len__(self) -> int:
        return len(self.pixels)

    @classmethod
    def from_mask(cls, mask: RasterMask) -> "PixelSet":
        ys, xs = np.nonzero(mask.bits)
        return cls(frozenset(zip(xs.tolist(), ys.tolist())), mask.width, mask.height)

    @classmethod
    def from_box(cls, box: Box, width: int, height: int) -> "PixelSet":
        x1, y1, x2, y2 = clip_to_frame(box, width, height)
        return cls(frozenset((x, y) for x in range(x1, x2) for y in range(y1, y2)), width, height)

    def with_pixel(self, xy: Tuple[int, int]) -> "PixelSet":
        return PixelSet(self.pixels | {xy}, self.width, self.height)

    def count_in(self, box: Box) -> int:
        x1, y1, x2, y2 = clip_to_frame(box, self.width, self.height)
        return sum(1 for x, y in self.pixels if x1 <= x < x2 and y1 <= y < y2)


def brute_box_mask_intersection(mask: RasterMask, b: Box) -> int:
    """Set mask pixels inside b, counted pixel by pixel over the window."""
    x1, y1, x2, y2 = clip_to_frame(b, mask.width, mask.height)
    return int(np.count_nonzero(mask.bits[y1:y2, x1:x2]))


def brute_gmaiou_fraction(anchor: Box, polygon: PixelSet, mask: RasterMask) -> Tuple[int, int]:
    """(|P| * |B^ n M|, |M| * (|B^| + |P| - |B^ n P|)) with every term enumerated."""
    m_area = int(np.count_nonzero(mask.bits))
    if m_area < 1:
        raise EmptyMaskError("GmaIoU is undefined for an empty mask")
    x1, y1, x2, y2 = clip_to_frame(anchor, mask.width, mask.height)
    anchor_area = (x2 - x1) * (y2 - y1)
    on_mask = brute_box_mask_intersection(mask, anchor) if anchor_area else 0
    in_polygon = polygon.count_in(anchor) if anchor_area else 0
    return len(polygon) * on_mask, m_area * (anchor_area + len(polygon) - in_polygon)


def brute_gmaiou_general(anchor: Box, polygon: PixelSet, mask: RasterMask) -> float:
    num, den = brute_gmaiou_fraction(anchor, polygon, mask)
    return num / den


def polygon_for(gt: GroundTruth, mode: GmaMode) -> PixelSet:
    if mode is GmaMode.POLY_IS_BOX:
        return PixelSet.from_box(gt.box, gt.mask.width, gt.mask.height)
    return PixelSet.from_mask(gt.mask)


# -- equivalence checks ------------------------------------------------------

@dataclass(frozen=True)
class CheckViolation:
    kind: str
    anchor: Tuple[int, int, int, int]
    gt_box: Tuple[int, int, int, int]
    mode: Optional[str]
    fast: str
    oracle: str

    def describe(self) -> str:
        mode = f" mode={self.mode}" if self.mode else ""
        return f"{self.kind}: anchor={self.anchor} gt_box={self.gt_box}{mode} fast={self.fast} oracle={self.oracle}"


@dataclass
class CheckReport:
    pairs_checked: int = 0
    strict_witnesses: int = 0
    equality_witnesses: int = 0
    violations: List[CheckViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def merge(self, other: "CheckReport") -> None:
        self.pairs_checked += other.pairs_checked
        self.strict_witnesses += other.strict_witnesses
        self.equality_witnesses += other.equality_witnesses
        self.violations.extend(other.violations)


def check_pair(anchor: Box, gt: GroundTruth, report: CheckReport) -> None:
    """Fast-vs-oracle equivalence and the P=B >= P=M ordering for one pair."""
    report.pairs_checked += 1
    fast_count = box_mask_intersection(gt.integral, anchor)
    slow_count = brute_box_mask_intersection(gt.mask, anchor)
    if fast_count != slow_count:
        report.violations.append(CheckViolation(
            "intersection", anchor.as_tuple(), gt.box.as_tuple(), None, str(fast_count), str(slow_count)))

    values = {}
    for mode in GmaMode:
        fast = gmaiou_fraction(anchor, gt, mode)
        slow = brute_gmaiou_fraction(anchor, polygon_for(gt, mode), gt.mask)
        if fast != slow:
            report.violations.append(CheckViolation(
                "gmaiou", anchor.as_tuple(), gt.box.as_tuple(), mode.value, f"{fast[0]}/{fast[1]}", f"{slow[0]}/{slow[1]}"))
        values[mode] = Fraction(*slow)

    with_box, with_mask = values[GmaMode.POLY_IS_BOX], values[GmaMode.POLY_IS_MASK]
    if with_box < with_mask:
        report.violations.append(CheckViolation(
            "ordering", anchor.as_tuple(), gt.box.as_tuple(), None, str(with_box), str(with_mask)))
    elif with_box > with_mask:
        report.strict_witnesses += 1
    else:
        report.equality_witnesses += 1


def _corrupt(gt: GroundTruth) -> GroundTruth:
    table = np.array(gt.integral.table)
    table[-1, -1] += 1
    return replace(gt, integral=replace(gt.integral, table=table))


def random_box(rng: np.random.Generator, width: int, height: int, margin: int = 0) -> Box:
    x1 = int(rng.integers(-margin, width + margin))
    y1 = int(rng.integers(-margin, height + margin))
    x2 = int(rng.integers(x1 + 1, width + margin + 1))
    y2 = int(rng.integers(y1 + 1, height + margin + 1))
    return Box(x1, y1, x2, y2)


def random_ground_truth(rng: np.random.Generator, width: int, height: int) -> GroundTruth:
    """Random polygon, rectangle or blob mask; never empty."""
    kind = rng.integers(0, 3)
    if kind == 0:
        mask = RasterMask.from_box(random_box(rng, width, height), width, height)
    elif kind == 1:
        n = int(rng.integers(3, 9))
        xs = rng.uniform(-0.5, width + 0.5, n)
        ys = rng.uniform(-0.5, height + 0.5, n)
        mask = rasterize(Polygon(tuple(zip(xs.tolist(), ys.tolist()))), width, height)
    else:
        mask = RasterMask(rng.random((height, width)) < rng.uniform(0.05, 0.9))
    if mask.pixel_count == 0:
        bits = np.array(mask.bits)
        bits[int(rng.integers(0, height)), int(rng.integers(0, width))] = True
        mask = RasterMask(bits)
    return GroundTruth.from_mask(mask)


def run_random_checks(trials: int, seed: int, max_size: int = 64, corrupt_integral: bool = False) -> CheckReport:
    rng = np.random.default_rng(seed)
    report = CheckReport()
    for _ in range(trials):
        width = int(rng.integers(1, max_size + 1))
        height = int(rng.integers(1, max_size + 1))
        gt = random_ground_truth(rng, width, height)
        if corrupt_integral:
            gt = _corrupt(gt)
        check_pair(random_box(rng, width, height, margin=4), gt, report)
    logger.info("[CHECK] %d random pairs, %d violation(s)", report.pairs_checked, len(report.violations))
    return report


def run_dataset_checks(
    images: Iterable[Tuple[Sequence[GroundTruth], np.ndarray]],
    samples: int,
    seed: int,
    corrupt_integral: bool = False,
) -> CheckReport:
    """
    images: per image, its ground truths and an (N, 4) integer anchor array.
    Each ground truth is checked against `samples` anchors drawn without
    replacement, plus its own box.
    """
    rng = np.random.default_rng(seed)
    report = CheckReport()
    for gts, anchors in images:
        for gt in gts:
            if corrupt_integral:
                gt = _corrupt(gt)
            picks = rng.choice(anchors.shape[0], size=min(samples, anchors.shape[0]), replace=False) if anchors.shape[0] else []
            candidates = [gt.box]
            for i in picks:
                x1, y1, x2, y2 = (int(v) for v in anchors[i])
                if x2 > x1 and y2 > y1:
                    candidates.append(Box(x1, y1, x2, y2))
            for anchor in candidates:
                check_pair(anchor, gt, report)
    logger.info("[CHECK] %d dataset pairs, %d violation(s)", report.pairs_checked, len(report.violations))
    return report


# -- benchmark ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkReport:
    n_anchors: int
    n_gts: int
    mask_size: int
    mode: str
    brute_ns: Tuple[int, ...]
    fast_ns: Tuple[int, ...]
    generated_at: str

    @property
    def brute_median_ns(self) -> float:
        return float(statistics.median(self.brute_ns))

    @property
    def fast_median_ns(self) -> float:
        return float(statistics.median(self.fast_ns))

    @property
    def speedup(self) -> float:
        return self.brute_median_ns / max(self.fast_median_ns, 1.0)

    def to_dict(self) -> dict:
        return {
            "n_anchors": self.n_anchors,
            "n_gts": self.n_gts,
            "mask_size": self.mask_size,
            "mode": self.mode,
            "repeats": len(self.brute_ns),
            "brute_ns": list(self.brute_ns),
            "fast_ns": list(self.fast_ns),
            "brute_median_ns": self.brute_median_ns,
            "fast_median_ns": self.fast_median_ns,
            "speedup": self.speedup,
            "generated_at": self.generated_at,
        }


def _random_masks(rng: np.random.Generator, n: int, size: int) -> List[RasterMask]:
    # filled ellipses; the centre pixel is always on
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    masks = []
    for _ in range(n):
        cx, cy = rng.uniform(0, size, 2)
        rx, ry = rng.uniform(1.0, size / 2.0, 2)
        bits = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
        bits[min(int(cy), size - 1), min(int(cx), size - 1)] = True
        masks.append(RasterMask(bits))
    return masks


def _random_anchor_array(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    x1 = rng.integers(0, size, n)
    y1 = rng.integers(0, size, n)
    x2 = x1 + 1 + (rng.random(n) * (size - x1)).astype(np.int64)
    y2 = y1 + 1 + (rng.random(n) * (size - y1)).astype(np.int64)
    return np.stack([x1, y1, np.minimum(x2, size), np.minimum(y2, size)], axis=1).astype(np.int64)


def _brute_matrix(anchors: np.ndarray, masks: Sequence[RasterMask], mode: GmaMode) -> np.ndarray:
    out = np.zeros((anchors.shape[0], len(masks)), dtype=np.float64)
    for g, mask in enumerate(masks):
        bits = mask.bits
        m_area = int(np.count_nonzero(bits))
        box = mask.tight_box()
        b_area = box.width * box.height
        p_area = b_area if mode is GmaMode.POLY_IS_BOX else m_area
        for i, (x1, y1, x2, y2) in enumerate(anchors.tolist()):
            on_mask = int(np.count_nonzero(bits[y1:y2, x1:x2]))
            anchor_area = (x2 - x1) * (y2 - y1)
            if mode is GmaMode.POLY_IS_BOX:
                w = min(x2, box.x2) - max(x1, box.x1)
                h = min(y2, box.y2) - max(y1, box.y1)
                union = anchor_area + b_area - (w * h if w > 0 and h > 0 else 0)
            else:
                union = anchor_area + m_area - on_mask
            out[i, g] = (p_area * on_mask) / (m_area * union)
    return out


def benchmark_pairing(
    n_anchors: int,
    n_gts: int,
    mask_size: int,
    repeats: int,
    seed: int = 0,
    mode: GmaMode = GmaMode.POLY_IS_BOX,
) -> BenchmarkReport:
    """
    Time brute-force against integral-image GmaIoU over the full anchor x gt
    grid. The fast timing includes building every integral image. Each repeat
    runs single-threaded; the two paths must agree exactly.
    """
    for name, value in (("n_anchors", n_anchors), ("n_gts", n_gts), ("mask_size", mask_size), ("repeats", repeats)):
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    rng = np.random.default_rng(seed)
    masks = _random_masks(rng, n_gts, mask_size)
    anchors = _random_anchor_array(rng, n_anchors, mask_size)

    brute_ns, fast_ns = [], []
    for r in range(repeats):
        t0 = time.perf_counter_ns()
        slow = _brute_matrix(anchors, masks, mode)
        t1 = time.perf_counter_ns()
        gts = [GroundTruth.from_mask(m) for m in masks]
        fast = gmaiou_matrix(anchors, gts, mode)
        t2 = time.perf_counter_ns()
        if not np.array_equal(slow, fast):
            raise AssertionError("brute-force and integral-image GmaIoU disagree")
        brute_ns.append(t1 - t0)
        fast_ns.append(t2 - t1)
        logger.debug("[BENCH] repeat %d: brute %.1f ms, fast %.1f ms", r, (t1 - t0) / 1e6, (t2 - t1) / 1e6)

    return BenchmarkReport(
        n_anchors=n_anchors,
        n_gts=n_gts,
        mask_size=mask_size,
        mode=mode.value,
        brute_ns=tuple(brute_ns),
        fast_ns=tuple(fast_ns),
        generated_at=utc_now().isoformat(),
    )
