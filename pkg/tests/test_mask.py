import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import rect_mask
from src.geometry import Box, FloatBox
from src.mask import (
    IntegralImage,
    Polygon,
    RasterMask,
    box_mask_intersection,
    box_mask_intersections,
    build_integral,
    cover_snap,
    cover_snap_array,
    mask_area,
    rasterize,
)


def _point_in_polygon(px, py, verts):
    # textbook ray cast, used as the rasterisation oracle
    inside = False
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        if (y0 <= py < y1) or (y1 <= py < y0):
            t = (py - y0) / (y1 - y0)
            x = x0 + t * (x1 - x0)
            if x > px:
                inside = not inside
    return inside


def test_polygon_validation():
    with pytest.raises(ValueError):
        Polygon(((0, 0), (1, 1)))
    with pytest.raises(ValueError):
        Polygon(((0, 0), (1, float("nan")), (2, 0)))
    with pytest.raises(ValueError):
        Polygon.from_flat([0, 0, 1, 1, 2])
    assert Polygon.from_flat([0, 0, 4, 0, 4, 4]).vertices == ((0.0, 0.0), (4.0, 0.0), (4.0, 4.0))


def test_rasterize_square():
    mask = rasterize(Polygon(((1, 1), (4, 1), (4, 4), (1, 4))), 8, 8)
    assert mask.pixel_count == 9
    ys, xs = np.nonzero(mask.bits)
    assert set(xs.tolist()) == {1, 2, 3}
    assert set(ys.tolist()) == {1, 2, 3}


def test_rasterize_full_frame():
    assert rasterize(Polygon(((0, 0), (8, 0), (8, 8), (0, 8))), 8, 8).pixel_count == 64


def test_rasterize_sliver_between_centres():
    sliver = Polygon(((0, 2.6), (8, 2.6), (8, 2.9), (0, 2.9)))
    assert rasterize(sliver, 8, 8).pixel_count == 0


def test_rasterize_even_odd_double_cover_is_empty():
    twice = Polygon(((0, 0), (4, 0), (4, 4), (0, 4), (0, 0), (4, 0), (4, 4), (0, 4)))
    assert rasterize(twice, 6, 6).pixel_count == 0


def test_rasterize_parts_are_or_merged():
    a = Polygon(((0, 0), (4, 0), (4, 4), (0, 4)))
    b = Polygon(((2, 2), (6, 2), (6, 6), (2, 6)))
    mask = rasterize([a, b], 8, 8)
    assert mask.pixel_count == 16 + 16 - 4


def test_rasterize_clips_to_frame():
    mask = rasterize(Polygon(((-10, -10), (5, -10), (5, 5), (-10, 5))), 8, 8)
    assert mask.bits.shape == (8, 8)
    assert mask.pixel_count == 25
    assert mask.tight_box() == Box(0, 0, 5, 5)


@given(
    st.lists(
        st.tuples(st.floats(-4, 20, allow_nan=False), st.floats(-4, 20, allow_nan=False)),
        min_size=3, max_size=7,
    )
)
@settings(deadline=None, max_examples=150)
def test_rasterize_matches_point_in_polygon(verts):
    poly = Polygon(tuple(verts))
    mask = rasterize(poly, 16, 16)
    for y in range(16):
        for x in range(16):
            assert mask.bits[y, x] == _point_in_polygon(x + 0.5, y + 0.5, poly.vertices)


def test_raster_mask_is_read_only():
    mask = RasterMask.zeros(4, 3)
    assert (mask.width, mask.height) == (4, 3)
    with pytest.raises(ValueError):
        mask.bits[0, 0] = True


def test_tight_box():
    assert RasterMask.zeros(5, 5).tight_box() is None
    assert rect_mask(10, 10, (2, 3, 5, 9)).tight_box() == Box(2, 3, 5, 9)


def test_integral_hand_example():
    bits = np.array([[1, 0], [0, 1]], dtype=bool)
    ii = build_integral(RasterMask(bits))
    assert ii.table.tolist() == [[0, 0, 0], [0, 1, 1], [0, 1, 2]]
    assert mask_area(ii) == 2


def test_integral_zero_and_ones():
    assert not build_integral(RasterMask.zeros(4, 4)).table.any()
    ii = build_integral(rect_mask(3, 3, (0, 0, 3, 3)))
    for i in range(4):
        for j in range(4):
            assert ii.table[i, j] == i * j


def test_integral_table_shape_and_dtype():
    ii = build_integral(rect_mask(6, 3, (0, 0, 6, 3)))
    assert ii.table.shape == (7, 4)
    assert ii.table.dtype == np.int64
    assert (ii.width, ii.height) == (6, 3)
    assert mask_area(ii) == 18
    with pytest.raises(ValueError):
        IntegralImage(np.zeros((1, 5)))


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
@settings(deadline=None)
def test_integral_invariants(w, h, seed):
    bits = np.random.default_rng(seed).random((h, w)) < 0.4
    t = build_integral(RasterMask(bits)).table
    assert not t[0, :].any() and not t[:, 0].any()
    assert (np.diff(t, axis=0) >= 0).all() and (np.diff(t, axis=1) >= 0).all()
    assert t[-1, -1] == bits.sum()


def test_box_mask_intersection_examples():
    strip = build_integral(rect_mask(8, 8, (1, 1, 4, 7)))
    assert box_mask_intersection(strip, Box(1, 1, 5, 7)) == 18
    assert box_mask_intersection(strip, Box(0, 0, 8, 8)) == 18
    assert box_mask_intersection(build_integral(RasterMask.zeros(8, 8)), Box(2, 2, 6, 6)) == 0
    # outside the frame counts nothing
    assert box_mask_intersection(strip, Box(20, 20, 30, 30)) == 0
    assert box_mask_intersection(strip, Box(-5, -5, 2, 2)) == 1


@given(
    st.integers(0, 2**32 - 1),
    st.integers(-6, 30), st.integers(-6, 30), st.integers(1, 30), st.integers(1, 30),
)
@settings(deadline=None)
def test_box_mask_intersection_matches_enumeration(seed, x1, y1, w, h):
    bits = np.random.default_rng(seed).random((17, 23)) < 0.5
    ii = build_integral(RasterMask(bits))
    box = Box(x1, y1, x1 + w, y1 + h)
    expected = sum(
        int(bits[y, x]) for y in range(max(y1, 0), min(y1 + h, 17)) for x in range(max(x1, 0), min(x1 + w, 23))
    )
    assert box_mask_intersection(ii, box) == expected


def test_box_mask_intersections_batch():
    ii = build_integral(rect_mask(8, 8, (1, 1, 4, 7)))
    boxes = np.array([[1, 1, 5, 7], [0, 0, 8, 8], [5, 5, 8, 8], [-3, -3, 2, 2]])
    got = box_mask_intersections(ii, boxes)
    assert got.tolist() == [box_mask_intersection(ii, Box(*b)) for b in boxes.tolist()]


def _random_bits(seed, w=23, h=17):
    bits = np.random.default_rng(seed).random((h, w)) < 0.5
    bits[h // 2, w // 2] = True
    return bits


def _tables(bits):
    mask = RasterMask(bits)
    return build_integral(mask), build_integral(mask, region=mask.tight_box())


coords = st.integers(-6, 30)


@given(st.integers(0, 2**32 - 1), coords, coords, st.integers(1, 30), st.integers(1, 30),
       st.lists(st.integers(0, 8), min_size=4, max_size=4))
@settings(deadline=None)
def test_enlarging_a_box_never_lowers_the_count(seed, x1, y1, w, h, grow):
    inner = Box(x1, y1, x1 + w, y1 + h)
    outer = Box(x1 - grow[0], y1 - grow[1], x1 + w + grow[2], y1 + h + grow[3])
    for ii in _tables(_random_bits(seed)):
        assert box_mask_intersection(ii, outer) >= box_mask_intersection(ii, inner)


@given(st.integers(0, 2**32 - 1), coords, coords, st.integers(2, 30), st.integers(2, 30), st.data())
@settings(deadline=None)
def test_split_counts_sum_to_whole(seed, x1, y1, w, h, data):
    box = Box(x1, y1, x1 + w, y1 + h)
    sx = data.draw(st.integers(x1 + 1, x1 + w - 1))
    sy = data.draw(st.integers(y1 + 1, y1 + h - 1))
    for ii in _tables(_random_bits(seed)):
        whole = box_mask_intersection(ii, box)
        assert box_mask_intersection(ii, Box(x1, y1, sx, y1 + h)) + box_mask_intersection(ii, Box(sx, y1, x1 + w, y1 + h)) == whole
        assert box_mask_intersection(ii, Box(x1, y1, x1 + w, sy)) + box_mask_intersection(ii, Box(x1, sy, x1 + w, y1 + h)) == whole


@pytest.mark.parametrize("seed", range(5))
def test_split_at_frame_edges(seed):
    bits = _random_bits(seed)
    h, w = bits.shape
    box = Box(-4, -3, w + 5, h + 2)
    for ii in _tables(bits):
        total = int(bits.sum())
        assert box_mask_intersection(ii, box) == total
        # cuts exactly on the frame border: the outside part counts nothing
        assert box_mask_intersection(ii, Box(-4, -3, 0, h + 2)) == 0
        assert box_mask_intersection(ii, Box(0, -3, w + 5, h + 2)) == total
        assert box_mask_intersection(ii, Box(-4, -3, w, h + 2)) == total
        assert box_mask_intersection(ii, Box(w, -3, w + 5, h + 2)) == 0
        assert box_mask_intersection(ii, Box(-4, -3, w + 5, 0)) == 0
        assert box_mask_intersection(ii, Box(-4, h, w + 5, h + 2)) == 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 20),
       st.lists(st.tuples(coords, coords, st.integers(1, 30), st.integers(1, 30)), min_size=1, max_size=10))
@settings(deadline=None)
def test_cropped_table_matches_full_frame(seed, w, h, boxes):
    bits = np.random.default_rng(seed).random((h, w)) < 0.3
    bits[h - 1, w - 1] = True
    full, cropped = _tables(bits)
    tight = RasterMask(bits).tight_box()
    assert cropped.origin == (tight.x1, tight.y1)
    assert cropped.table.shape == (tight.width + 1, tight.height + 1)
    assert mask_area(cropped) == mask_area(full)
    rows = np.array([(x, y, x + bw, y + bh) for x, y, bw, bh in boxes])
    assert box_mask_intersections(cropped, rows).tolist() == box_mask_intersections(full, rows).tolist()
    for row in rows.tolist():
        assert box_mask_intersection(cropped, Box(*row)) == box_mask_intersection(full, Box(*row))


def test_region_must_hold_the_mask():
    mask = rect_mask(8, 8, (1, 1, 4, 7))
    with pytest.raises(ValueError):
        build_integral(mask, region=Box(1, 1, 3, 7))
    with pytest.raises(ValueError):
        build_integral(mask, region=Box(0, 0, 9, 8))
    with pytest.raises(ValueError):
        IntegralImage(np.zeros((3, 3)), origin=(-1, 0))


def test_float_box_lookup_is_cover_snapped():
    full = build_integral(rect_mask(8, 8, (0, 0, 8, 8)))
    assert box_mask_intersection(full, FloatBox(0.0, 0.0, 3.5, 3.5)) == 16
    assert box_mask_intersection(full, FloatBox(0.2, 0.2, 3.0, 3.0)) == 9
    assert box_mask_intersection(full, FloatBox(8.5, 0.0, 12.0, 4.0)) == 0
    cropped = build_integral(rect_mask(8, 8, (2, 2, 6, 6)), region=Box(2, 2, 6, 6))
    assert box_mask_intersection(cropped, FloatBox(1.5, 1.5, 3.2, 3.2)) == 4


def test_cover_snap():
    assert cover_snap(FloatBox(1.2, 0.5, 3.0, 2.1), 8, 8) == Box(1, 0, 3, 3)
    assert cover_snap(FloatBox(-4.5, -1.0, 9.5, 3.5), 8, 8) == Box(0, 0, 8, 4)
    assert cover_snap(FloatBox(9.0, 9.0, 12.0, 12.0), 8, 8) is None
    assert cover_snap(Box(2, 2, 5, 5), 8, 8) == Box(2, 2, 5, 5)


def test_cover_snap_array_matches_scalar():
    rows = np.array([[1.2, 0.5, 3.0, 2.1], [-4.5, -1.0, 9.5, 3.5], [0.0, 0.0, 8.0, 8.0], [6.5, 6.5, 7.1, 7.9]])
    snapped = cover_snap_array(rows, 8, 8)
    assert snapped.dtype == np.int64
    for row, got in zip(rows.tolist(), snapped.tolist()):
        assert tuple(got) == cover_snap(FloatBox(*row), 8, 8).as_tuple()
