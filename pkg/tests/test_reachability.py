import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gara.geometry import Box, Partition, check_tiling, halve, interiors_overlap, normalized_volume
from gara.reachability import (
    EdgeErrorStats,
    SplitConfig,
    fnn_reach,
    is_stable,
    jsonl_trace,
    reach_ratio,
    refine_goals,
    split_set,
)
from gara.tinynet import IntervalVector, Layer, Mlp, forward, interval_forward

EXTENT = Box((0.0, 0.0, -1.0, -1.0), (10.0, 10.0, 1.0, 1.0))
FULL_V = ((-1.0, -1.0), (1.0, 1.0))


def identity_fk(dim=4, enc_dim=8):
    """Forward model that predicts the segment start state."""
    w = np.hstack([np.eye(dim), np.zeros((dim, enc_dim))])
    return Mlp([Layer(w, np.zeros(dim), "linear")])


def shift_fk(dx):
    """Forward model that moves every state by ``dx`` along x."""
    net = identity_fk()
    net.layers[0].b[0] = dx
    return net


def pos_box(x0, y0, x1, y1, v=FULL_V):
    return Box((x0, y0, v[0][0], v[0][1]), (x1, y1, v[1][0], v[1][1]))


NARROW_V = ((0.0, 0.0), (0.1, 0.1))


def test_fnn_reach_identity_and_clipping():
    g = pos_box(1, 2, 3, 4)
    img = fnn_reach(identity_fk(), g, np.zeros(8), EXTENT)
    assert np.allclose(img.lo, g.lo) and np.allclose(img.hi, g.hi)
    assert img.issubset(g, atol=1e-12)
    shifted = fnn_reach(shift_fk(8.0), g, np.zeros(8), EXTENT)
    assert shifted.hi[0] == 10.0
    assert fnn_reach(shift_fk(20.0), g, np.zeros(8), EXTENT) is None


def test_reach_ratio_cases():
    g_d = pos_box(0, 0, 1, 1)
    assert reach_ratio(None, g_d, EXTENT) == 0.0
    assert reach_ratio(pos_box(0, 0, 2, 1), g_d, EXTENT) == pytest.approx(0.5)
    assert reach_ratio(pos_box(5, 5, 6, 6), g_d, EXTENT) == 0.0
    # zero-volume image: decided by its center
    assert reach_ratio(Box.point((0.5, 0.5, 0.0, 0.0)), g_d, EXTENT) == 1.0
    assert reach_ratio(Box.point((5.0, 5.0, 0.0, 0.0)), g_d, EXTENT) == 0.0


def test_split_set_full_reach():
    g = pos_box(0, 0, 1, 1)
    reached, unreached = split_set(g, g, identity_fk(), extent=EXTENT)
    assert reached == [g] and unreached == []


def test_split_set_disjoint():
    g_s = pos_box(5, 5, 6, 6)
    reached, unreached = split_set(g_s, pos_box(0, 0, 1, 1), identity_fk(), extent=EXTENT)
    assert reached == [] and unreached == [g_s]


def test_split_set_half_overlap_splits_once():
    g_s = pos_box(0, 0, 2, 1, NARROW_V)
    g_d = pos_box(0, 0, 1, 1)
    log = []
    reached, unreached = split_set(g_s, g_d, identity_fk(), SplitConfig(0.9, 0.1), extent=EXTENT, trace=log.append)
    assert reached == [pos_box(0, 0, 1, 1, NARROW_V)]
    assert unreached == [pos_box(1, 0, 2, 1, NARROW_V)]
    assert [r["verdict"] for r in log] == ["split", "reached", "unreached"]
    assert log[0]["r"] == pytest.approx(0.5)


def test_split_budget_classifies_by_half():
    # the identity image always straddles g_d, so only the budget stops splitting
    g_s = pos_box(0, 0, 2, 2)
    g_d = pos_box(0, 0, 1.37, 1.37)
    for max_leaves in (1, 3, 8, 64):
        calls = []
        cfg = SplitConfig(0.99, 0.01, 1e-9, max_leaves, merge_siblings=False)
        reached, unreached = split_set(g_s, g_d, identity_fk(), cfg, extent=EXTENT, trace=calls.append)
        assert len(calls) <= max_leaves
        check_tiling(g_s, reached + unreached, EXTENT)
    cfg = SplitConfig(0.99, 0.01, 10.0, 64)
    reached, unreached = split_set(g_s, g_d, identity_fk(), cfg, extent=EXTENT)
    # too thin to halve at once: r = 1.37^2 / 4 < 0.5
    assert reached == [] and unreached == [g_s]


def test_merge_siblings_collapses_equal_halves():
    # a wide band of undecided ratios that still ends with equal verdicts
    g_s = pos_box(0, 0, 4, 4)
    g_d = pos_box(0, 0, 3, 3)
    cfg_plain = SplitConfig(0.95, 0.05, 0.2, 64, merge_siblings=False)
    cfg_merge = SplitConfig(0.95, 0.05, 0.2, 64, merge_siblings=True)
    r0, u0 = split_set(g_s, g_d, identity_fk(), cfg_plain, extent=EXTENT)
    r1, u1 = split_set(g_s, g_d, identity_fk(), cfg_merge, extent=EXTENT)
    assert len(r1) + len(u1) <= len(r0) + len(u0)
    check_tiling(g_s, r1 + u1, EXTENT)
    # every merged piece is a union of pieces with the same verdict
    for piece in r1:
        inner = [b for b in r0 + u0 if b.issubset(piece)]
        assert inner and all(b in r0 for b in inner)
    for piece in u1:
        inner = [b for b in r0 + u0 if b.issubset(piece)]
        assert inner and all(b in u0 for b in inner)


@st.composite
def split_case(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    def rand_box():
        a = rng.uniform(0, 1, size=4)
        b = rng.uniform(0, 1, size=4)
        lo, hi = np.minimum(a, b), np.maximum(a, b) + 1e-3
        lo_s = EXTENT.lo_arr + lo * EXTENT.widths
        hi_s = EXTENT.lo_arr + np.minimum(hi, 1.0) * EXTENT.widths
        return Box.from_arrays(lo_s, hi_s)
    t_unre = draw(st.floats(0.0, 0.4))
    t_re = draw(st.floats(0.6, 1.0))
    cfg = SplitConfig(t_re, t_unre, draw(st.floats(0.005, 0.2)), draw(st.integers(1, 64)),
                      draw(st.booleans()))
    return rand_box(), rand_box(), Mlp.random([12, 16, 16, 4], rng), cfg


@settings(max_examples=150, deadline=None)
@given(split_case())
def test_split_set_tiles_source(case):
    g_s, g_d, fk, cfg = case
    calls = []
    reached, unreached = split_set(g_s, g_d, fk, cfg, extent=EXTENT, trace=calls.append)
    pieces = reached + unreached
    check_tiling(g_s, pieces, EXTENT)
    total = sum(normalized_volume(b, EXTENT) for b in pieces)
    assert total == pytest.approx(normalized_volume(g_s, EXTENT), rel=1e-6)
    assert len(calls) <= cfg.max_leaves


def test_reached_pieces_contain_sampled_predictions():
    rng = np.random.default_rng(11)
    fk = Mlp.random([12, 16, 16, 4], rng)
    g_s = pos_box(2, 2, 4, 4)
    g_d = pos_box(0, 0, 5, 5)
    from gara.geometry import goal_encoding
    enc = goal_encoding(g_d, EXTENT)
    reached, unreached = split_set(g_s, g_d, fk, extent=EXTENT)
    for piece in reached + unreached:
        img = fnn_reach(fk, piece, enc)
        xs = rng.uniform(piece.lo_arr, piece.hi_arr, size=(200, 4))
        preds = forward(fk, np.hstack([xs, np.tile(enc, (200, 1))]))
        assert np.all(preds >= img.lo_arr) and np.all(preds <= img.hi_arr)


def test_is_stable_examples():
    stats = EdgeErrorStats(window=5, tol=0.1)
    e = (pos_box(0, 0, 1, 1), pos_box(1, 1, 2, 2))
    for v in (0.2, 0.2, 0.2, 0.2):
        stats.record(e, v)
    assert not is_stable(stats, e)
    stats.record(e, 0.2)
    assert is_stable(stats, e)
    other = (e[1], e[0])
    for v in (0.1, 0.5, 0.1, 0.1, 0.1):
        stats.record(other, v)
    assert not is_stable(stats, other)
    zeros = (e[0], e[0])
    for _ in range(5):
        stats.record(zeros, 0.0)
    assert is_stable(stats, zeros)
    # the window slides
    for v in (0.1, 0.1, 0.1, 0.1, 0.1):
        stats.record(other, v)
    assert is_stable(stats, other)
    assert len(stats.errors(other)) == 5


def stable_stats(*edges):
    stats = EdgeErrorStats(window=2, tol=0.1)
    for e in edges:
        stats.record(e, 0.3)
        stats.record(e, 0.3)
    return stats


def two_cells():
    left, right = halve(EXTENT, 0)
    return Partition([left, right], EXTENT)


def test_refine_goals_no_stable_edges():
    p = two_cells()
    assert refine_goals(p, {(0, 1)}, identity_fk(), EdgeErrorStats()) is p


def test_refine_goals_full_reach_keeps_cells():
    p = two_cells()
    stats = stable_stats((p[0], p[0]), (p[0], p[1]))
    # self-edges are skipped; an identity model never reaches the other half
    out = refine_goals(p, {(0, 0), (0, 1)}, identity_fk(), stats)
    assert out == p


PLANE = Box((0.0, 0.0), (10.0, 10.0))


def plane_shift(dx):
    net = identity_fk(2, 4)
    net.layers[0].b[0] = dx
    return net


def three_rooms():
    return Partition(
        [Box((0.0, 0.0), (5.0, 5.0)), Box((5.0, 0.0), (10.0, 5.0)), Box((0.0, 5.0), (10.0, 10.0))],
        PLANE,
    )


def test_refine_goals_splits_stable_source():
    p = three_rooms()
    stats = stable_stats((p[0], p[1]))
    # every state moves 2.5 along x, so the right half of cell 0 reaches cell 1
    out = refine_goals(p, [(0, 1)], plane_shift(2.5), stats, SplitConfig(0.9, 0.1))
    assert len(out) == len(p) + 1
    out.audit()
    assert out.is_refinement_of(p)
    assert out.boxes[-2:] == (Box((2.5, 0.0), (5.0, 5.0)), Box((0.0, 0.0), (2.5, 5.0)))


def test_refine_goals_re_resolves_split_sources():
    p = two_cells()
    stats = stable_stats((p[1], p[0]), (p[0], p[1]))
    out = refine_goals(p, [(1, 0), (0, 1)], shift_fk(2.5), stats)
    out.audit()
    assert len(out) > len(p)
    assert out.is_refinement_of(p)


def test_jsonl_trace(tmp_path):
    path = tmp_path / "trace.jsonl"
    with jsonl_trace(path) as log:
        split_set(pos_box(0, 0, 2, 1, NARROW_V), pos_box(0, 0, 1, 1), identity_fk(), extent=EXTENT, trace=log)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["verdict"] for r in rows] == ["split", "reached", "unreached"]
    assert set(rows[0]) == {"box", "image", "r", "verdict"}


def test_split_config_validation():
    with pytest.raises(ValueError):
        SplitConfig(t_re=0.1, t_unre=0.5)
    with pytest.raises(ValueError):
        SplitConfig(min_width=0.0)
    with pytest.raises(ValueError):
        SplitConfig(max_leaves=0)
