"""
Anchor generation and anchor-to-ground-truth assignment.

Two assigners share one pluggable proximity measure:

* assign_fixed - YOLACT/RetinaNet style fixed thresholds with an ignore band.
* assign_atss  - Adaptive Training Sample Selection: top-k candidates by centre
  distance per pyramid level, an adaptive threshold from the candidates'
  scores, and a centre-inside-box filter.

A measure maps an (N, 4) integer anchor array and a list of GroundTruth to an
(N, G) score matrix. Registered measures: iou, giou, diou, gmaiou-b (P = B)
and gmaiou-m (P = M). Any callable with the same signature also works.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property, partial
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import yaml

from .geometry import pairwise_diou, pairwise_giou, pairwise_iou
from .gmaiou import GmaMode, GroundTruth, gmaiou_matrix
from .mask import cover_snap_array
from .utils import ConfigError

logger = logging.getLogger(__name__)

MeasureFn = Callable[[np.ndarray, Sequence[GroundTruth]], np.ndarray]


# -- anchors -----------------------------------------------------------------

@dataclass(frozen=True)
class AnchorLevel:
    stride: float
    sizes: Tuple[float, ...]
    ratios: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if not self.stride > 0:
            raise ConfigError(f"Level stride must be positive, got {self.stride}")
        if not self.sizes or any(s <= 0 for s in self.sizes):
            raise ConfigError(f"Level sizes must be a non-empty list of positive numbers, got {self.sizes}")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"Level ratios must be a non-empty list of positive numbers, got {self.ratios}")

    @property
    def anchors_per_location(self) -> int:
        return len(self.sizes) * len(self.ratios)


ANCHOR_PRESETS: Dict[str, Tuple[AnchorLevel, ...]] = {
    # 3 anchors per location, sizes 24..384
    "yolact-550": tuple(
        AnchorLevel(stride=s, sizes=(3.0 * s,), ratios=(0.5, 1.0, 2.0)) for s in (8, 16, 32, 64, 128)
    ),
    # 1 anchor per location, octave base scale 8
    "atss-550": tuple(
        AnchorLevel(stride=s, sizes=(8.0 * s,), ratios=(1.0,)) for s in (8, 16, 32, 64, 128)
    ),
}


def load_anchor_config(preset_or_path: str) -> Tuple[AnchorLevel, ...]:
    """
    Resolve a preset name or a YAML/JSON file of the form
    {"levels": [{"stride": 8, "sizes": [24], "ratios": [0.5, 1, 2]}, ...]}.
    """
    if preset_or_path in ANCHOR_PRESETS:
        return ANCHOR_PRESETS[preset_or_path]
    if not os.path.exists(preset_or_path):
        raise ConfigError(
            f"Unknown anchor preset or missing file {preset_or_path!r}; presets: {sorted(ANCHOR_PRESETS)}"
        )
    try:
        with open(preset_or_path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Anchor config {preset_or_path} is not valid YAML/JSON: {e}") from e
    entries = raw.get("levels") if isinstance(raw, dict) else None
    if not entries:
        raise ConfigError(f"Anchor config {preset_or_path} needs a non-empty 'levels' list")
    levels = []
    for i, lv in enumerate(entries):
        try:
            levels.append(AnchorLevel(
                stride=float(lv["stride"]),
                sizes=tuple(float(s) for s in lv["sizes"]),
                ratios=tuple(float(r) for r in lv.get("ratios", [1.0])),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Anchor config {preset_or_path}: level {i} is malformed ({e!r})") from e
    return tuple(levels)


@dataclass(frozen=True, eq=False)
class AnchorGrid:
    image_width: int
    image_height: int
    levels: Tuple[AnchorLevel, ...]
    boxes: np.ndarray          # (N, 4) float64
    level_index: np.ndarray    # (N,) int64
    centers: np.ndarray        # (N, 2) float64

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    @cached_property
    def snapped(self) -> np.ndarray:
        """Cover-snapped integer boxes, the form every measure is scored on."""
        return cover_snap_array(self.boxes, self.image_width, self.image_height)

    def level_ranges(self) -> List[Tuple[int, int]]:
        # level-major ordering keeps every level contiguous
        ranges = []
        for lv in range(len(self.levels)):
            idx = np.flatnonzero(self.level_index == lv)
            ranges.append((int(idx[0]), int(idx[-1]) + 1) if idx.size else (0, 0))
        return ranges

    @classmethod
    def from_boxes(cls, boxes, image_width: int, image_height: int) -> "AnchorGrid":
        """Single-level grid over explicit anchor boxes."""
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        centers = np.stack([(boxes[:, 0] + boxes[:, 2]) / 2.0, (boxes[:, 1] + boxes[:, 3]) / 2.0], axis=1)
        level = AnchorLevel(stride=float(max(image_width, image_height)), sizes=(1.0,))
        return cls(image_width, image_height, (level,), boxes,
                   np.zeros(boxes.shape[0], dtype=np.int64), centers)


def generate_anchors(image_w: int, image_h: int, levels: Sequence[AnchorLevel]) -> AnchorGrid:
    """
    Dense anchors, ordered level-major, then row-major over the feature grid,
    then by per-location anchor (ratio-major, then size). Level l has a
    ceil(W / stride) x ceil(H / stride) feature grid whose cells evenly tile the
    image, and anchors sit at the cell centres.
    """
    levels = tuple(levels)
    if not levels:
        raise ConfigError("Anchor generation needs at least one pyramid level")
    if image_w < 1 or image_h < 1:
        raise ConfigError(f"Image must be at least 1x1, got {image_w}x{image_h}")

    all_boxes, all_levels, all_centers = [], [], []
    for lv, level in enumerate(levels):
        fw = math.ceil(image_w / level.stride)
        fh = math.ceil(image_h / level.stride)
        step_x, step_y = image_w / fw, image_h / fh
        rows, cols = np.meshgrid(np.arange(fh), np.arange(fw), indexing="ij")
        cx = (cols.ravel() + 0.5) * step_x
        cy = (rows.ravel() + 0.5) * step_y

        half = []
        for r in level.ratios:
            h_ratio = math.sqrt(r)
            for s in level.sizes:
                half.append((s / h_ratio / 2.0, s * h_ratio / 2.0))
        half = np.asarray(half, dtype=np.float64)            # (A, 2)

        ctr = np.stack([cx, cy], axis=1)                      # (L, 2)
        lo = ctr[:, None, :] - half[None, :, :]
        hi = ctr[:, None, :] + half[None, :, :]
        boxes = np.concatenate([lo, hi], axis=-1).reshape(-1, 4)
        all_boxes.append(boxes)
        all_centers.append(np.repeat(ctr, half.shape[0], axis=0))
        all_levels.append(np.full(boxes.shape[0], lv, dtype=np.int64))
        logger.debug("[ANCHORS] level %d: stride %s, %dx%d grid, %d anchors", lv, level.stride, fw, fh, boxes.shape[0])

    return AnchorGrid(
        image_width=image_w,
        image_height=image_h,
        levels=levels,
        boxes=np.concatenate(all_boxes),
        level_index=np.concatenate(all_levels),
        centers=np.concatenate(all_centers),
    )


# -- measures ----------------------------------------------------------------

def _gt_boxes(gts: Sequence[GroundTruth]) -> np.ndarray:
    if not gts:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray([gt.box.as_tuple() for gt in gts], dtype=np.float64)


def _box_measure(kernel, anchors: np.ndarray, gts: Sequence[GroundTruth]) -> np.ndarray:
    return kernel(np.asarray(anchors, dtype=np.float64).reshape(-1, 4), _gt_boxes(gts))


MEASURES: Dict[str, MeasureFn] = {
    "iou": partial(_box_measure, pairwise_iou),
    "giou": partial(_box_measure, pairwise_giou),
    "diou": partial(_box_measure, pairwise_diou),
    "gmaiou-b": lambda anchors, gts: gmaiou_matrix(anchors, gts, GmaMode.POLY_IS_BOX),
    "gmaiou-m": lambda anchors, gts: gmaiou_matrix(anchors, gts, GmaMode.POLY_IS_MASK),
}

MEASURE_RANGES: Dict[str, Tuple[float, float]] = {
    "iou": (0.0, 1.0),
    "giou": (-1.0, 1.0),
    "diou": (-1.0, 1.0),
    "gmaiou-b": (0.0, 1.0),
    "gmaiou-m": (0.0, 1.0),
}


def resolve_measure(measure: Union[str, MeasureFn]) -> MeasureFn:
    if callable(measure):
        return measure
    try:
        return MEASURES[measure]
    except KeyError:
        raise ConfigError(f"Unknown measure {measure!r}; expected one of {sorted(MEASURES)}") from None


# -- results -----------------------------------------------------------------

class Label(IntEnum):
    IGNORE = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True, eq=False)
class AssignmentResult:
    labels: np.ndarray     # (N,) int8 Label codes
    gt_index: np.ndarray   # (N,) int64, -1 unless positive
    scores: np.ndarray     # (N,) float64, winning / best score

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def label(self, i: int) -> Label:
        return Label(int(self.labels[i]))

    @property
    def counts(self) -> Dict[str, int]:
        return {
            "positive": int(np.count_nonzero(self.labels == Label.POSITIVE)),
            "negative": int(np.count_nonzero(self.labels == Label.NEGATIVE)),
            "ignore": int(np.count_nonzero(self.labels == Label.IGNORE)),
        }

    def positives_per_gt(self, num_gts: int) -> List[int]:
        pos = self.gt_index[self.labels == Label.POSITIVE]
        return np.bincount(pos, minlength=num_gts).astype(int).tolist()

    @classmethod
    def all_negative(cls, n: int) -> "AssignmentResult":
        return cls(
            labels=np.full(n, Label.NEGATIVE, dtype=np.int8),
            gt_index=np.full(n, -1, dtype=np.int64),
            scores=np.zeros(n, dtype=np.float64),
        )


# -- fixed thresholds --------------------------------------------------------

@dataclass(frozen=True)
class FixedThresholdConfig:
    pos_thr: float = 0.5
    neg_thr: float = 0.4

    def __post_init__(self):
        if not (0.0 <= self.neg_thr <= self.pos_thr <= 1.0):
            raise ConfigError(
                f"Thresholds need 0 <= neg_thr <= pos_thr <= 1, got neg_thr={self.neg_thr}, pos_thr={self.pos_thr}"
            )


THRESHOLD_PRESETS: Dict[str, FixedThresholdConfig] = {
    "yolact": FixedThresholdConfig(pos_thr=0.5, neg_thr=0.4),
    "rpn": FixedThresholdConfig(pos_thr=0.7, neg_thr=0.3),
    "rcnn": FixedThresholdConfig(pos_thr=0.5, neg_thr=0.5),
}


def _anchor_boxes(anchors: Union[AnchorGrid, np.ndarray]) -> np.ndarray:
    if isinstance(anchors, AnchorGrid):
        return anchors.snapped
    return np.asarray(anchors, dtype=np.int64).reshape(-1, 4)


def assign_fixed(
    anchors: Union[AnchorGrid, np.ndarray],
    gts: Sequence[GroundTruth],
    cfg: FixedThresholdConfig,
    measure: Union[str, MeasureFn] = "iou",
) -> AssignmentResult:
    """
    Best score s over ground truths per anchor: s >= pos_thr is positive
    (argmax ground truth, lowest index on ties), s < neg_thr is negative,
    anything in between is ignored.
    """
    measure_fn = resolve_measure(measure)
    boxes = _anchor_boxes(anchors)
    n = boxes.shape[0]
    if not gts:
        return AssignmentResult.all_negative(n)

    scores = measure_fn(boxes, gts)
    best_gt = scores.argmax(axis=1)
    best = scores[np.arange(n), best_gt]

    labels = np.full(n, Label.IGNORE, dtype=np.int8)
    labels[best < cfg.neg_thr] = Label.NEGATIVE
    positive = best >= cfg.pos_thr
    labels[positive] = Label.POSITIVE
    gt_index = np.where(positive, best_gt, -1).astype(np.int64)
    return AssignmentResult(labels=labels, gt_index=gt_index, scores=best)


# -- ATSS --------------------------------------------------------------------

@dataclass(frozen=True)
class AtssConfig:
    k: int = 9
    measure: Union[str, MeasureFn] = "iou"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"ATSS k must be a positive integer, got {self.k}")
        resolve_measure(self.measure)


def atss_candidates(anchors: AnchorGrid, gts: Sequence[GroundTruth], k: int) -> np.ndarray:
    """
    Step (i): per pyramid level, the k anchors whose centres are closest to
    each ground-truth box centre (ties -> lower anchor index). Returns an
    (K_total, G) array of anchor indices; independent of the measure.
    """
    gt_boxes = _gt_boxes(gts)
    gt_centers = np.stack([(gt_boxes[:, 0] + gt_boxes[:, 2]) / 2.0, (gt_boxes[:, 1] + gt_boxes[:, 3]) / 2.0], axis=1)
    picked = []
    for start, end in anchors.level_ranges():
        if end <= start:
            continue
        diff = anchors.centers[start:end, None, :] - gt_centers[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        kk = min(k, end - start)
        order = np.argsort(dist, axis=0, kind="stable")[:kk]
        picked.append(order + start)
    if not picked:
        return np.zeros((0, len(gts)), dtype=np.int64)
    return np.concatenate(picked, axis=0)


def _centers_inside(centers: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    cx, cy = centers[..., 0], centers[..., 1]
    return (cx > gt_boxes[..., 0]) & (cx < gt_boxes[..., 2]) & (cy > gt_boxes[..., 1]) & (cy < gt_boxes[..., 3])


def adaptive_thresholds(candidate_scores: np.ndarray) -> np.ndarray:
    """Step (ii) statistic per column: mean + population standard deviation."""
    mean = candidate_scores.mean(axis=0)
    std = candidate_scores.std(axis=0)
    thr = mean + std
    # identical candidates: the threshold is that value, not a rounded sum
    flat = np.ptp(candidate_scores, axis=0) == 0
    thr[flat] = candidate_scores[0, flat]
    return thr


def assign_atss(anchors: AnchorGrid, gts: Sequence[GroundTruth], cfg: AtssConfig) -> AssignmentResult:
    n = len(anchors)
    if not gts or n == 0:
        return AssignmentResult.all_negative(n)

    measure_fn = resolve_measure(cfg.measure)
    scores = measure_fn(anchors.snapped, gts)                   # (N, G)
    cand = atss_candidates(anchors, gts, cfg.k)                  # (K, G)
    cols = np.arange(len(gts))
    cand_scores = scores[cand, cols[None, :]]                    # (K, G)
    thr = adaptive_thresholds(cand_scores)

    gt_boxes = _gt_boxes(gts)
    inside = _centers_inside(anchors.centers[cand], gt_boxes)
    keep = (cand_scores >= thr[None, :]) & inside

    # resolve anchors kept by several ground truths: highest score, then lowest index
    kept_scores = np.full((n, len(gts)), -np.inf)
    rows, gcols = np.nonzero(keep)
    kept_scores[cand[rows, gcols], gcols] = cand_scores[rows, gcols]
    winner = kept_scores.argmax(axis=1)
    winner_score = kept_scores[np.arange(n), winner]
    positive = np.isfinite(winner_score)

    labels = np.where(positive, Label.POSITIVE, Label.NEGATIVE).astype(np.int8)
    gt_index = np.where(positive, winner, -1).astype(np.int64)
    best = np.where(positive, winner_score, scores.max(axis=1))
    logger.debug("[ASSIGN] ATSS thresholds per gt: %s", np.round(thr, 4).tolist())
    return AssignmentResult(labels=labels, gt_index=gt_index, scores=best)
