"""
COCO-style instance annotations -> GroundTruth collections.

Supported subset:
  images[{id, width, height}]
  annotations[{id, image_id, category_id, iscrowd, segmentation: [[x1, y1, ...], ...], bbox: [x, y, w, h]}]

Crowd annotations and RLE segmentations are skipped with a counted warning.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, TypeVar

from .geometry import Box, FloatBox
from .gmaiou import GroundTruth
from .mask import Polygon, cover_snap, rasterize
from .utils import AnnotationError

logger = logging.getLogger(__name__)

BOX_SOURCES = ("tight", "stored")
WINDOW_PER_THREAD = 4

T = TypeVar("T")


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int


@dataclass(frozen=True)
class AnnotationRecord:
    id: int
    image_id: int
    category_id: int
    polygons: Tuple[Polygon, ...]
    bbox: Optional[Tuple[float, float, float, float]] = None


@dataclass
class AnnotationFile:
    images: Dict[int, ImageRecord]
    annotations: List[AnnotationRecord]
    skipped: int = 0
    warnings: List[str] = field(default_factory=list)
    _by_image: Optional[Dict[int, List[AnnotationRecord]]] = field(default=None, init=False, repr=False)

    def reindex(self) -> None:
        by_image: Dict[int, List[AnnotationRecord]] = {}
        for ann in self.annotations:
            by_image.setdefault(ann.image_id, []).append(ann)
        self._by_image = by_image

    def annotations_for(self, image_id: int) -> List[AnnotationRecord]:
        if self._by_image is None:
            self.reindex()
        return list(self._by_image.get(image_id, ()))

    def image_ids(self) -> List[int]:
        return sorted(self.images)


@dataclass(frozen=True, eq=False)
class DatasetImage:
    id: int
    width: int
    height: int
    ground_truths: Tuple[GroundTruth, ...]


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _field(obj: Dict[str, Any], name: str, where: str, kind=int, required: bool = True, default=None):
    if name not in obj:
        if required:
            raise AnnotationError(f"{where}: missing required field '{name}'")
        return default
    value = obj[name]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise AnnotationError(f"{where}: field '{name}' must be an integer, got {value!r}")
    elif not isinstance(value, kind):
        raise AnnotationError(f"{where}: field '{name}' has the wrong type ({type(value).__name__})")
    return value


def _warn(parsed: AnnotationFile, message: str) -> None:
    parsed.skipped += 1
    parsed.warnings.append(message)
    logger.warning("[INGEST] %s", message)


def parse_annotations(data: Any, source: str = "<memory>") -> AnnotationFile:
    if not isinstance(data, dict):
        raise AnnotationError(f"{source}: top level must be an object")
    images_raw = _field(data, "images", source, kind=list)
    anns_raw = _field(data, "annotations", source, kind=list)

    images: Dict[int, ImageRecord] = {}
    for i, img in enumerate(images_raw):
        where = f"{source}: images[{i}]"
        if not isinstance(img, dict):
            raise AnnotationError(f"{where}: must be an object")
        rec = ImageRecord(_field(img, "id", where), _field(img, "width", where), _field(img, "height", where))
        if rec.width < 1 or rec.height < 1:
            raise AnnotationError(f"{where}: width/height must be >= 1, got {rec.width}x{rec.height}")
        if rec.id in images:
            raise AnnotationError(f"{where}: duplicate image id {rec.id}")
        images[rec.id] = rec

    parsed = AnnotationFile(images=images, annotations=[])
    seen_ids = set()
    dangling = []
    for i, ann in enumerate(anns_raw):
        where = f"{source}: annotations[{i}]"
        if not isinstance(ann, dict):
            raise AnnotationError(f"{where}: must be an object")
        ann_id = _field(ann, "id", where)
        image_id = _field(ann, "image_id", where)
        category_id = _field(ann, "category_id", where)
        iscrowd = _field(ann, "iscrowd", where, required=False, default=0)
        if "segmentation" not in ann:
            raise AnnotationError(f"{where}: missing required field 'segmentation'")
        segmentation = ann["segmentation"]
        if ann_id in seen_ids:
            raise AnnotationError(f"{where}: duplicate annotation id {ann_id}")
        seen_ids.add(ann_id)
        if image_id not in images:
            dangling.append((ann_id, image_id))
            continue

        bbox = ann.get("bbox")
        if bbox is not None:
            if not (isinstance(bbox, list) and len(bbox) == 4 and all(isinstance(v, (int, float)) for v in bbox)):
                raise AnnotationError(f"{where}: field 'bbox' must be [x, y, w, h]")
            bbox = tuple(float(v) for v in bbox)

        if iscrowd:
            _warn(parsed, f"annotation {ann_id}: crowd annotation skipped")
            continue
        if isinstance(segmentation, dict):
            _warn(parsed, f"annotation {ann_id}: RLE segmentation skipped")
            continue
        if not isinstance(segmentation, list):
            raise AnnotationError(f"{where}: field 'segmentation' must be a list of polygons")

        polygons = []
        for j, part in enumerate(segmentation):
            if not isinstance(part, list) or not all(isinstance(v, (int, float)) for v in part):
                raise AnnotationError(f"{where}: segmentation[{j}] must be a flat list of numbers")
            if len(part) < 6 or len(part) % 2 or not all(math.isfinite(v) for v in part):
                logger.warning("[INGEST] annotation %s: polygon part %d dropped (%d coordinates)", ann_id, j, len(part))
                continue
            polygons.append(Polygon.from_flat(part))
        if not polygons:
            _warn(parsed, f"annotation {ann_id}: no usable polygon")
            continue
        parsed.annotations.append(AnnotationRecord(ann_id, image_id, category_id, tuple(polygons), bbox))

    if dangling:
        listing = ", ".join(f"annotation {a} -> image {im}" for a, im in dangling[:20])
        more = f" (+{len(dangling) - 20} more)" if len(dangling) > 20 else ""
        raise AnnotationError(f"{source}: {len(dangling)} annotation(s) reference unknown images: {listing}{more}")

    parsed.annotations.sort(key=lambda a: a.id)
    parsed.reindex()
    logger.info("[INGEST] %s: %d images, %d annotations, %d skipped",
                source, len(images), len(parsed.annotations), parsed.skipped)
    return parsed


def load_annotations(path: str) -> AnnotationFile:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise AnnotationError(f"Cannot read annotations {path}: {e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise AnnotationError(f"{path}: not UTF-8 (byte offset {e.start})") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"{path}: invalid JSON at byte offset {_byte_offset(text, e.pos)}: {e.msg}") from e
    return parse_annotations(data, source=path)


def _stored_box(rec: AnnotationRecord, tight: Box, width: int, height: int) -> Box:
    # widened to the tight box so MOB(B, M) stays <= 1
    x, y, w, h = rec.bbox
    snapped = cover_snap(FloatBox(x, y, x + w, y + h), width, height) if w > 0 and h > 0 else None
    if snapped is None:
        return tight
    box = Box(min(snapped.x1, tight.x1), min(snapped.y1, tight.y1), max(snapped.x2, tight.x2), max(snapped.y2, tight.y2))
    if box != snapped:
        logger.debug("[INGEST] annotation %s: stored bbox widened to cover the mask", rec.id)
    return box


def to_ground_truths(parsed: AnnotationFile, image_id: int, box_source: str = "tight") -> List[GroundTruth]:
    """Rasterise every kept annotation of one image, in annotation-id order."""
    if box_source not in BOX_SOURCES:
        raise AnnotationError(f"Unknown ground-truth box source {box_source!r}; expected one of {BOX_SOURCES}")
    image = parsed.images.get(image_id)
    if image is None:
        raise AnnotationError(f"Unknown image id {image_id}")

    gts = []
    for rec in parsed.annotations_for(image_id):
        mask = rasterize(rec.polygons, image.width, image.height)
        tight = mask.tight_box()
        if tight is None:
            logger.warning("[INGEST] annotation %s: empty mask after rasterisation, dropped", rec.id)
            continue
        box = tight
        if box_source == "stored" and rec.bbox is not None:
            box = _stored_box(rec, tight, image.width, image.height)
        gts.append(GroundTruth.from_mask(
            mask, class_id=rec.category_id, box=box, annotation_id=rec.id, stored_bbox=rec.bbox))
    return gts


def build_image(parsed: AnnotationFile, image_id: int, box_source: str = "tight") -> DatasetImage:
    img = parsed.images[image_id]
    return DatasetImage(img.id, img.width, img.height, tuple(to_ground_truths(parsed, image_id, box_source)))


def map_dataset(
    parsed: AnnotationFile,
    fn: Callable[[DatasetImage], T],
    box_source: str = "tight",
    threads: int = 1,
) -> Iterator[T]:
    """
    Yield fn(image) for every image in id order. Each image is rasterised in
    the worker that runs fn and dropped once fn returns; at most
    WINDOW_PER_THREAD * threads images are in flight.
    """
    if box_source not in BOX_SOURCES:
        raise AnnotationError(f"Unknown ground-truth box source {box_source!r}; expected one of {BOX_SOURCES}")
    ids = parsed.image_ids()

    def run(image_id: int) -> T:
        return fn(build_image(parsed, image_id, box_source))

    if threads <= 1 or len(ids) <= 1:
        for image_id in ids:
            yield run(image_id)
        return
    window = WINDOW_PER_THREAD * threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(ids), window):
            # map yields in submission order, i.e. image-id order
            yield from pool.map(run, ids[start:start + window])


def iter_dataset(parsed: AnnotationFile, box_source: str = "tight", threads: int = 1) -> Iterator[DatasetImage]:
    return map_dataset(parsed, lambda image: image, box_source, threads)


def load_dataset(parsed: AnnotationFile, box_source: str = "tight", threads: int = 1) -> List[DatasetImage]:
    """All images in id order, held at once; the CLI streams with map_dataset instead."""
    return list(iter_dataset(parsed, box_source, threads))
