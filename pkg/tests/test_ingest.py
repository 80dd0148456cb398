import json

import pytest

from conftest import fixture_path
from src.geometry import Box
from src.ingest import (
    WINDOW_PER_THREAD,
    load_annotations,
    load_dataset,
    map_dataset,
    parse_annotations,
    to_ground_truths,
)
from src.utils import AnnotationError


def _doc(annotations, images=None):
    return {"images": images or [{"id": 1, "width": 8, "height": 8}], "annotations": annotations}


def _ann(ann_id=1, image_id=1, segmentation=None, **extra):
    ann = {"id": ann_id, "image_id": image_id, "category_id": 1, "iscrowd": 0,
           "segmentation": segmentation or [[1, 1, 4, 1, 4, 4, 1, 4]]}
    ann.update(extra)
    return ann


def test_empty_file():
    parsed = load_annotations(fixture_path("empty.json"))
    assert parsed.images == {} and parsed.annotations == []
    assert load_dataset(parsed) == []


def test_square_polygon():
    parsed = load_annotations(fixture_path("square.json"))
    gts = to_ground_truths(parsed, 7)
    assert len(gts) == 1
    assert gts[0].area == 9
    assert gts[0].box == Box(1, 1, 4, 4)
    assert gts[0].class_id == 3 and gts[0].annotation_id == 1


def test_crowd_and_rle_are_skipped_and_counted():
    parsed = load_annotations(fixture_path("two_images.json"))
    assert parsed.skipped == 1
    assert "crowd" in parsed.warnings[0]
    assert [a.id for a in parsed.annotations] == [10, 11, 20]

    rle = parse_annotations(_doc([_ann(segmentation={"counts": "abc", "size": [8, 8]})]))
    assert rle.skipped == 1 and "RLE" in rle.warnings[0]


def test_dataset_is_in_image_id_order():
    images = load_dataset(load_annotations(fixture_path("two_images.json")), threads=4)
    assert [img.id for img in images] == [1, 2]
    assert [gt.annotation_id for gt in images[0].ground_truths] == [10, 11]
    # two polygon parts, one instance
    only = images[1].ground_truths
    assert len(only) == 1
    assert only[0].area == 100 + 196
    assert only[0].box == Box(4, 4, 44, 44)


def test_overlapping_instances_stay_independent():
    parsed = parse_annotations(_doc([
        _ann(1, segmentation=[[0, 0, 5, 0, 5, 5, 0, 5]]),
        _ann(2, segmentation=[[3, 3, 8, 3, 8, 8, 3, 8]]),
    ]))
    a, b = to_ground_truths(parsed, 1)
    assert a.area == 25 and b.area == 25
    assert (a.mask.bits & b.mask.bits).sum() == 4


def test_polygon_past_frame_is_clipped():
    parsed = parse_annotations(_doc([_ann(segmentation=[[-4, -4, 20, -4, 20, 3, -4, 3]])]))
    (gt,) = to_ground_truths(parsed, 1)
    assert gt.area == 24
    assert gt.box == Box(0, 0, 8, 3)


def test_image_without_annotations():
    parsed = parse_annotations(_doc([], images=[{"id": 1, "width": 8, "height": 8}, {"id": 2, "width": 4, "height": 4}]))
    assert to_ground_truths(parsed, 2) == []


def test_short_polygon_parts_are_dropped():
    parsed = parse_annotations(_doc([_ann(segmentation=[[0, 0, 1, 1], [1, 1, 4, 1, 4, 4, 1, 4]])]))
    assert len(parsed.annotations[0].polygons) == 1
    none_left = parse_annotations(_doc([_ann(segmentation=[[0, 0, 1, 1]])]))
    assert none_left.annotations == [] and none_left.skipped == 1


def test_empty_mask_after_rasterisation_is_dropped():
    sliver = [[0, 2.6, 8, 2.6, 8, 2.9, 0, 2.9]]
    parsed = parse_annotations(_doc([_ann(segmentation=sliver)]))
    assert to_ground_truths(parsed, 1) == []


def test_stored_box_source():
    parsed = parse_annotations(_doc([_ann(bbox=[0.5, 0.5, 4.0, 2.0])]))
    (tight,) = to_ground_truths(parsed, 1, box_source="tight")
    (stored,) = to_ground_truths(parsed, 1, box_source="stored")
    assert tight.box == Box(1, 1, 4, 4)
    # snapped to [0, 5) x [0, 3), then widened to cover the mask
    assert stored.box == Box(0, 0, 5, 4)
    assert stored.stored_bbox == (0.5, 0.5, 4.0, 2.0)
    with pytest.raises(AnnotationError):
        to_ground_truths(parsed, 1, box_source="loose")


def test_unknown_image_id():
    parsed = parse_annotations(_doc([]))
    with pytest.raises(AnnotationError):
        to_ground_truths(parsed, 99)


def test_malformed_json_reports_byte_offset(tmp_path):
    path = tmp_path / "broken.json"
    path.write_bytes('{"images": ["é", }'.encode("utf-8"))
    with pytest.raises(AnnotationError) as err:
        load_annotations(str(path))
    # the stray brace sits after a two-byte character
    assert "byte offset 18" in str(err.value)


def test_missing_file():
    with pytest.raises(AnnotationError):
        load_annotations("/nonexistent/annotations.json")


@pytest.mark.parametrize("doc,field", [
    ({"annotations": []}, "images"),
    ({"images": [{"id": 1, "width": 8}], "annotations": []}, "height"),
    ({"images": [{"id": 1, "width": "8", "height": 8}], "annotations": []}, "width"),
    (_doc([{"id": 1, "image_id": 1, "category_id": 1, "iscrowd": 0}]), "segmentation"),
    (_doc([{"id": 1, "image_id": 1, "segmentation": [[0, 0, 1, 0, 1, 1]]}]), "category_id"),
])
def test_schema_errors_name_the_field(doc, field):
    with pytest.raises(AnnotationError) as err:
        parse_annotations(doc)
    assert field in str(err.value)


def test_dangling_image_ids_are_listed():
    with pytest.raises(AnnotationError) as err:
        parse_annotations(_doc([_ann(5, image_id=3), _ann(6, image_id=1), _ann(7, image_id=4)]))
    message = str(err.value)
    assert "annotation 5 -> image 3" in message and "annotation 7 -> image 4" in message


def test_duplicate_ids():
    with pytest.raises(AnnotationError):
        parse_annotations(_doc([_ann(1), _ann(1)]))
    with pytest.raises(AnnotationError):
        parse_annotations({"images": [{"id": 1, "width": 2, "height": 2}] * 2, "annotations": []})


def test_load_does_not_modify_input(tmp_path):
    path = tmp_path / "a.json"
    text = json.dumps(_doc([_ann()]))
    path.write_text(text, encoding="utf-8")
    load_dataset(load_annotations(str(path)))
    assert path.read_text(encoding="utf-8") == text


def test_annotations_are_indexed_per_image():
    parsed = load_annotations(fixture_path("two_images.json"))
    assert [a.id for a in parsed.annotations_for(1)] == [10, 11]
    assert [a.id for a in parsed.annotations_for(2)] == [20]
    assert parsed.annotations_for(3) == []
    parsed.annotations_for(1).clear()
    assert len(parsed.annotations_for(1)) == 2


def _many_images(n, per_image=3):
    images = [{"id": i, "width": 16, "height": 16} for i in range(1, n + 1)]
    anns = [_ann(i * 10 + j, image_id=i, segmentation=[[j, j, j + 4, j, j + 4, j + 4, j, j + 4]])
            for i in range(1, n + 1) for j in range(per_image)]
    return parse_annotations({"images": images, "annotations": anns})


def test_large_file_lookup():
    parsed = _many_images(4000)
    assert all(len(parsed.annotations_for(i)) == 3 for i in parsed.image_ids())


@pytest.mark.parametrize("threads", [1, 3])
def test_map_dataset_keeps_id_order(threads):
    parsed = _many_images(25)
    got = list(map_dataset(parsed, lambda img: (img.id, [gt.annotation_id for gt in img.ground_truths]),
                           threads=threads))
    assert [image_id for image_id, _ in got] == list(range(1, 26))
    assert got[4] == (5, [50, 51, 52])


@pytest.mark.parametrize("threads", [1, 2])
def test_map_dataset_builds_one_window_at_a_time(threads):
    parsed = _many_images(40)
    seen = []
    stream = map_dataset(parsed, lambda img: seen.append(img.id) or img.id, threads=threads)
    assert next(stream) == 1
    assert len(seen) <= max(1, WINDOW_PER_THREAD * threads)
    assert list(stream) == list(range(2, 41))
    assert sorted(seen) == list(range(1, 41))


def test_map_dataset_rejects_unknown_box_source():
    with pytest.raises(AnnotationError):
        list(map_dataset(_many_images(1), lambda img: img, box_source="loose"))
