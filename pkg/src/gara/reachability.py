"""Reachability-driven refinement of the goal partition.

The forward model is an :class:`~gara.tinynet.Mlp` taking ``[state, goal
encoding]`` in raw state units and predicting the state reached ``k`` steps
later. Its image of a box is over-approximated with interval propagation, and
source cells are split until every piece either mostly lands in the
destination cell or mostly misses it.
"""
from __future__ import annotations

import json
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .geometry import (
    Box,
    Partition,
    goal_encoding,
    halve,
    intersect,
    normalized_volume,
    widest_dim,
)
from .tinynet import IntervalVector, Mlp, interval_forward

Edge = tuple[Box, Box]


@dataclass(frozen=True)
class SplitConfig:
    t_re: float = 0.9
    t_unre: float = 0.1
    min_width: float = 0.02
    max_leaves: int = 64
    merge_siblings: bool = True

    def __post_init__(self):
        if not 0.0 <= self.t_unre < self.t_re <= 1.0:
            raise ValueError(f"need 0 <= t_unre < t_re <= 1, got {self.t_unre}, {self.t_re}")
        if self.min_width <= 0:
            raise ValueError("min_width must be positive")
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be at least 1")


class EdgeErrorStats:
    """Sliding window of forward-model validation errors per edge.

    Edges are keyed by their ``(source box, destination box)`` pair, so the
    history of an edge ends when either cell gets split.
    """

    def __init__(self, window: int = 5, tol: float = 0.1):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.tol = tol
        self._errors: dict[Edge, deque] = {}

    def record(self, edge: Edge, error: float) -> None:
        buf = self._errors.setdefault(edge, deque(maxlen=self.window))
        buf.append(float(error))

    def errors(self, edge: Edge) -> list[float]:
        return list(self._errors.get(edge, ()))

    def __contains__(self, edge) -> bool:
        return edge in self._errors

    def __len__(self) -> int:
        return len(self._errors)

    def is_stable(self, edge: Edge) -> bool:
        return is_stable(self, edge)


def is_stable(stats: EdgeErrorStats, edge: Edge) -> bool:
    """Full window and relative spread ``(max - min) / max`` below tolerance."""
    errs = stats.errors(edge)
    if len(errs) < stats.window:
        return False
    hi, lo = max(errs), min(errs)
    if hi == 0.0:
        return True
    return (hi - lo) / hi < stats.tol


def fnn_reach(fk: Mlp, g: Box, goal_enc, extent: Box | None = None) -> Box | None:
    """Sound box enclosure of ``fk``'s predictions over ``g``.

    The goal encoding enters as a degenerate interval. The image is clipped
    to ``extent`` when given; ``None`` means the clipped image is empty.
    """
    enc = np.asarray(goal_enc, dtype=float)
    lo = np.concatenate([g.lo_arr, enc])
    hi = np.concatenate([g.hi_arr, enc])
    out = interval_forward(fk, IntervalVector(lo, hi))
    image = Box.from_arrays(out.lo, out.hi)
    if extent is None:
        return image
    return intersect(image, extent)


def reach_ratio(image: Box | None, g_d: Box, extent: Box) -> float:
    """Fraction of the image volume that lies inside ``g_d``.

    A zero-volume image counts as fully inside or fully outside depending on
    where its center falls.
    """
    if image is None:
        return 0.0
    vol = normalized_volume(image, extent)
    if vol == 0.0:
        return 1.0 if g_d.contains(image.center) else 0.0
    inter = intersect(image, g_d)
    if inter is None:
        return 0.0
    return normalized_volume(inter, extent) / vol


def split_set(
    g_s: Box,
    g_d: Box,
    fk: Mlp,
    cfg: SplitConfig | None = None,
    *,
    extent: Box,
    trace: Callable[[dict], None] | None = None,
) -> tuple[list[Box], list[Box]]:
    """Split ``g_s`` into pieces predicted to reach / miss ``g_d``.

    Pieces in the undecided band ``t_unre <= r <= t_re`` are halved along
    their widest normalized side. A piece that is too thin to halve, or whose
    children could not all be evaluated within ``max_leaves`` image
    computations, is classified by ``r >= 0.5`` instead. With
    ``merge_siblings`` the two halves of a box that end up with the same
    verdict are returned as the box itself.
    """
    cfg = cfg or SplitConfig()
    enc = goal_encoding(g_d, extent)
    # node i: its box, its verdict and its parent in the halving tree
    boxes: list[Box] = [g_s]
    verdicts: list[str] = [""]
    parents: list[int] = [-1]
    work = deque([0])
    calls = 0
    while work:
        i = work.popleft()
        g = boxes[i]
        image = fnn_reach(fk, g, enc, extent)
        calls += 1
        r = reach_ratio(image, g_d, extent)
        if r > cfg.t_re:
            verdict = "reached"
        elif r < cfg.t_unre:
            verdict = "unreached"
        else:
            dim = widest_dim(g, extent)
            half_width = g.widths[dim] / extent.widths[dim] / 2.0
            if half_width < cfg.min_width or calls + len(work) + 2 > cfg.max_leaves:
                verdict = "reached" if r >= 0.5 else "unreached"
            else:
                verdict = "split"
                for child in halve(g, dim):
                    boxes.append(child)
                    verdicts.append("")
                    parents.append(i)
                    work.append(len(boxes) - 1)
        verdicts[i] = verdict
        if trace is not None:
            trace(
                {
                    "box": g.to_list(),
                    "image": image.to_list() if image is not None else None,
                    "r": r,
                    "verdict": verdict,
                }
            )
    if cfg.merge_siblings:
        _merge_siblings(verdicts, parents)
    leaves = [(b, v) for b, v, a in zip(boxes, verdicts, _alive(verdicts, parents)) if a]
    reached = [b for b, v in leaves if v == "reached"]
    unreached = [b for b, v in leaves if v == "unreached"]
    return reached, unreached


def _merge_siblings(verdicts: list[str], parents: list[int]) -> None:
    """Collapse split nodes whose two halves share a verdict, bottom-up.

    The halves of a box tile it exactly, so the merged parent covers the same
    states with the same classification.
    """
    children: dict[int, list[int]] = {}
    for i, parent in enumerate(parents):
        if parent >= 0:
            children.setdefault(parent, []).append(i)
    # children always have larger indices than their parent
    for i in sorted(children, reverse=True):
        kids = children[i]
        if verdicts[i] == "split" and verdicts[kids[0]] == verdicts[kids[1]] != "split":
            verdicts[i] = verdicts[kids[0]]


def _alive(verdicts: list[str], parents: list[int]) -> list[bool]:
    """A node is a leaf of the final tree if no ancestor was collapsed."""
    alive = []
    for i, parent in enumerate(parents):
        alive.append(parent < 0 or (alive[parent] and verdicts[parent] == "split"))
    return alive


def refine_goals(
    p: Partition,
    edges: Iterable[tuple[int, int]],
    fk: Mlp,
    stats: EdgeErrorStats,
    cfg: SplitConfig | None = None,
    trace: Callable[[dict], None] | None = None,
) -> Partition:
    """Split the source cell of every stable edge against its destination.

    Edges are processed in ascending ``(src, dst)`` order. When an earlier
    edge already split a source cell, every current cell inside the original
    source is split in turn.
    """
    cfg = cfg or SplitConfig()
    resolved = [(p.boxes[s], p.boxes[d]) for s, d in sorted(set(edges)) if s != d]
    out = p
    for src_box, dst_box in resolved:
        if not is_stable(stats, (src_box, dst_box)):
            continue
        targets = [b for b in out.boxes if b.issubset(src_box)]
        for target in targets:
            reached, unreached = split_set(
                target, dst_box, fk, cfg, extent=p.extent, trace=trace
            )
            pieces = reached + unreached
            if len(pieces) > 1:
                out = out.replace_box(out.index(target), pieces)
    return out


@contextmanager
def jsonl_trace(path):
    """Context manager yielding a callable that appends records as JSON lines."""
    with Path(path).open("a") as fh:
        yield lambda record: fh.write(json.dumps(record) + "\n")
