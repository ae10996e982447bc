import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gara.geometry import (
    Box,
    GeometryError,
    Partition,
    check_tiling,
    complement_decompose,
    goal_encoding,
    halve,
    intersect,
    load_partition,
    normalized_volume,
    save_partition,
    volume,
    widest_dim,
)

EXTENT = Box((0.0, 0.0, -1.0, -1.0), (10.0, 10.0, 1.0, 1.0))


@st.composite
def sub_box(draw, outer=EXTENT):
    lo, hi = [], []
    for a, b in zip(outer.lo, outer.hi):
        u = sorted(draw(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2)))
        lo.append(a + u[0] * (b - a))
        hi.append(a + u[1] * (b - a))
    return Box(tuple(lo), tuple(hi))


def test_box_rejects_inverted():
    with pytest.raises(GeometryError):
        Box((1.0,), (0.0,))


def test_volume_and_normalized_volume():
    b = Box((0.0, 0.0, 0.0, 0.0), (5.0, 2.0, 1.0, 0.5))
    assert volume(b) == 5.0
    assert normalized_volume(b, EXTENT) == pytest.approx(0.5 * 0.2 * 0.5 * 0.25)


def test_intersect():
    a = Box((0.0, 0.0), (2.0, 2.0))
    assert intersect(a, Box((1.0, 1.0), (3.0, 3.0))) == Box((1.0, 1.0), (2.0, 2.0))
    assert intersect(a, Box((3.0, 3.0), (4.0, 4.0))) is None
    # touching faces give a degenerate box
    assert volume(intersect(a, Box((2.0, 0.0), (3.0, 1.0)))) == 0.0


def test_halve():
    left, right = halve(Box((0.0, 0.0), (2.0, 4.0)), 1)
    assert left == Box((0.0, 0.0), (2.0, 2.0))
    assert right == Box((0.0, 2.0), (2.0, 4.0))
    with pytest.raises(GeometryError):
        halve(Box((0.0, 1.0), (2.0, 1.0)), 1)


def test_widest_dim_normalized_with_lowest_index_ties():
    # positions span 10, velocities span 2: 5 units of x equal 1 unit of v_x
    b = Box((0.0, 0.0, 0.0, 0.0), (5.0, 5.0, 1.0, 1.0))
    assert widest_dim(b, EXTENT) == 0
    b = Box((0.0, 0.0, 0.0, 0.0), (4.0, 5.0, 1.0, 0.5))
    assert widest_dim(b, EXTENT) == 1


def test_goal_encoding():
    g = Box((0.0, 5.0, -1.0, 0.0), (5.0, 10.0, 1.0, 1.0))
    np.testing.assert_allclose(goal_encoding(g, EXTENT), [0, 0.5, 0, 0.5, 0.5, 1, 1, 1])


@settings(max_examples=200, deadline=None)
@given(sub_box())
def test_complement_decompose_tiles(b):
    g = EXTENT
    pieces = complement_decompose(g, b)
    assert len(pieces) <= 2 * g.dim
    if volume(b) > 0:
        check_tiling(g, [b, *[p for p in pieces if volume(p) > 0]], EXTENT)


def test_complement_decompose_rejects_outside():
    with pytest.raises(GeometryError):
        complement_decompose(Box((0.0,), (1.0,)), Box((0.5,), (2.0,)))


def test_partition_locate_half_open_and_closed_top():
    p = Partition(
        [Box((0.0, 0.0, -1.0, -1.0), (10.0, 5.0, 1.0, 1.0)), Box((0.0, 5.0, -1.0, -1.0), (10.0, 10.0, 1.0, 1.0))],
        EXTENT,
    )
    assert p.locate((1.0, 4.999, 0.0, 0.0)) == 0
    assert p.locate((1.0, 5.0, 0.0, 0.0)) == 1
    assert p.locate((10.0, 10.0, 1.0, 1.0)) == 1
    assert p.locate((0.0, 0.0, -1.0, -1.0)) == 0
    with pytest.raises(GeometryError):
        p.locate((11.0, 0.0, 0.0, 0.0))


def test_partition_rejects_gaps_and_overlaps():
    with pytest.raises(GeometryError):
        Partition([Box((0.0,), (0.4,)), Box((0.5,), (1.0,))], Box((0.0,), (1.0,)))
    with pytest.raises(GeometryError):
        Partition([Box((0.0,), (0.6,)), Box((0.5,), (1.0,))], Box((0.0,), (1.0,)))


def test_replace_box_checks_tiling_and_keeps_order():
    p = Partition.trivial(EXTENT)
    a, b = halve(EXTENT, 0)
    q = p.replace_box(0, [a, b])
    assert q.boxes == (a, b)
    with pytest.raises(GeometryError):
        p.replace_box(0, [a])
    r = q.replace_box(0, list(halve(a, 1)))
    assert r.boxes[0] == b
    np.testing.assert_array_equal(r.parents_in(q), [1, 0, 0])
    assert r.is_refinement_of(q) and r.is_refinement_of(p)
    assert not p.is_refinement_of(q)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 3)), min_size=1, max_size=12),
       st.lists(st.tuples(*[st.floats(0, 1)] * 4), min_size=1, max_size=20))
def test_random_refinements_keep_locate_consistent(splits, points):
    p = Partition.trivial(EXTENT)
    for cell, dim in splits:
        cell %= len(p)
        p = p.replace_box(cell, list(halve(p[cell], dim)))
    p.audit()
    lo, hi = np.array(EXTENT.lo), np.array(EXTENT.hi)
    for u in points:
        s = lo + np.array(u) * (hi - lo)
        i = p.locate(s)
        assert p[i].contains(s)
        # on shared faces the owner is the cell whose lower face holds s
        lo_ok = np.all(s >= p[i].lo_arr)
        assert lo_ok


def test_save_load_round_trip_bit_exact(tmp_path):
    p = Partition.trivial(EXTENT)
    for dim in (0, 2, 1, 3, 0):
        p = p.replace_box(len(p) - 1, list(halve(p[len(p) - 1], dim)))
    # awkward binary fractions
    third = Box((0.0, 0.0, -1.0, -1.0), (10.0 / 3.0, 10.0, 1.0, 1.0))
    q = Partition.trivial(EXTENT).replace_box(0, [third, *complement_decompose(EXTENT, third)])
    for part in (p, q):
        path = tmp_path / "p.json"
        save_partition(part, path, step=7)
        back = load_partition(path)
        assert back == part
        assert all(a.lo == b.lo and a.hi == b.hi for a, b in zip(back, part))


def test_load_partition_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(GeometryError):
        load_partition(bad)
    bad.write_text('{"boxes": []}')
    with pytest.raises(GeometryError):
        load_partition(bad)
    good = tmp_path / "good.json"
    save_partition(Partition.trivial(EXTENT), good)
    with pytest.raises(GeometryError):
        load_partition(good, extent=Box((0.0, 0.0, -1.0, -1.0), (15.0, 10.0, 1.0, 1.0)))
