"""Axis-aligned boxes and box partitions of the state space.

A :class:`Partition` is the goal space: an ordered list of interior-disjoint
boxes that together cover an ``extent`` box. Boxes are treated as half-open
``[lo, hi)`` for point location, with the upper faces of the extent closed,
so every point of the extent belongs to exactly one cell.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REL_TOL = 1e-6


class GeometryError(ValueError):
    """Raised when a geometric contract is violated."""


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo, hi]``; hashable so it can key dicts."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise GeometryError(f"dimension mismatch: {len(lo)} vs {len(hi)}")
        if any(a > b for a, b in zip(lo, hi)):
            raise GeometryError(f"lo must be <= hi, got lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_arrays(cls, lo, hi) -> "Box":
        return cls(tuple(np.asarray(lo, dtype=float)), tuple(np.asarray(hi, dtype=float)))

    @classmethod
    def point(cls, p) -> "Box":
        return cls(tuple(p), tuple(p))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.array(self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi_arr - self.lo_arr

    @property
    def center(self) -> np.ndarray:
        return (self.lo_arr + self.hi_arr) / 2.0

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=float)
        return bool(np.all(s >= self.lo_arr) and np.all(s <= self.hi_arr))

    def issubset(self, other: "Box", atol: float = 0.0) -> bool:
        return bool(
            np.all(self.lo_arr >= other.lo_arr - atol) and np.all(self.hi_arr <= other.hi_arr + atol)
        )

    def to_list(self) -> list[list[float]]:
        return [list(self.lo), list(self.hi)]

    @classmethod
    def from_list(cls, pair) -> "Box":
        lo, hi = pair
        return cls(tuple(lo), tuple(hi))


def volume(b: Box) -> float:
    """Product of side lengths (0 for any degenerate side)."""
    return float(np.prod(b.widths))


def normalized_volume(b: Box, extent: Box) -> float:
    """Volume with every dimension rescaled so the extent is the unit cube."""
    return float(np.prod(b.widths / extent.widths))


def intersect(a: Box, b: Box) -> Box | None:
    if a.dim != b.dim:
        raise GeometryError("cannot intersect boxes of different dimension")
    lo = np.maximum(a.lo_arr, b.lo_arr)
    hi = np.minimum(a.hi_arr, b.hi_arr)
    if np.any(lo > hi):
        return None
    return Box.from_arrays(lo, hi)


def halve(b: Box, dim: int) -> tuple[Box, Box]:
    if not b.hi[dim] > b.lo[dim]:
        raise GeometryError(f"cannot halve zero-width dimension {dim}")
    mid = (b.lo[dim] + b.hi[dim]) / 2.0
    left_hi = list(b.hi)
    left_hi[dim] = mid
    right_lo = list(b.lo)
    right_lo[dim] = mid
    return Box(b.lo, tuple(left_hi)), Box(tuple(right_lo), b.hi)


def widest_dim(b: Box, extent: Box) -> int:
    """Widest side in extent-normalized units; ties go to the lowest index."""
    w = b.widths / extent.widths
    return int(np.argmax(w))


def normalize(s, extent: Box) -> np.ndarray:
    lo = np.asarray(extent.lo)
    return (np.asarray(s, dtype=float) - lo) / (np.asarray(extent.hi) - lo)


def goal_encoding(g: Box, extent: Box) -> np.ndarray:
    """``[lo, hi]`` of ``g`` in extent-normalized coordinates (length ``2 * dim``)."""
    return np.concatenate([normalize(g.lo, extent), normalize(g.hi, extent)])


def interiors_overlap(a: Box, b: Box) -> bool:
    lo = np.maximum(a.lo_arr, b.lo_arr)
    hi = np.minimum(a.hi_arr, b.hi_arr)
    return bool(np.all(hi > lo))


def complement_decompose(g: Box, b: Box) -> list[Box]:
    """Guillotine-cut ``g`` around ``b`` into at most ``2 * dim`` boxes.

    The returned boxes together with ``b`` tile ``g``. Each axis contributes
    a lower and an upper slab, and later axes are restricted to ``b``'s span
    on the earlier ones.
    """
    if not b.issubset(g):
        raise GeometryError(f"{b} is not contained in {g}")
    pieces = []
    lo = list(g.lo)
    hi = list(g.hi)
    for d in range(g.dim):
        if b.lo[d] > lo[d]:
            piece_hi = list(hi)
            piece_hi[d] = b.lo[d]
            pieces.append(Box(tuple(lo), tuple(piece_hi)))
        if b.hi[d] < hi[d]:
            piece_lo = list(lo)
            piece_lo[d] = b.hi[d]
            pieces.append(Box(tuple(piece_lo), tuple(hi)))
        lo[d] = b.lo[d]
        hi[d] = b.hi[d]
    return pieces


def check_tiling(whole: Box, pieces: Sequence[Box], extent: Box | None = None) -> None:
    """Raise :class:`GeometryError` unless ``pieces`` tile ``whole``."""
    ref = extent if extent is not None else whole
    scale = np.where(ref.widths > 0, ref.widths, 1.0)
    for p in pieces:
        if not p.issubset(whole):
            raise GeometryError(f"piece {p} is not inside {whole}")
    for i in range(len(pieces)):
        for j in range(i + 1, len(pieces)):
            if interiors_overlap(pieces[i], pieces[j]):
                raise GeometryError(f"pieces {i} and {j} overlap")
    total = sum(float(np.prod(p.widths / scale)) for p in pieces)
    target = float(np.prod(whole.widths / scale))
    if abs(total - target) > REL_TOL * max(target, 1e-300):
        raise GeometryError(f"pieces cover volume {total}, expected {target}")


class Partition:
    """Finite list of interior-disjoint boxes covering ``extent``."""

    def __init__(self, boxes: Iterable[Box], extent: Box, validate: bool = True):
        self.boxes: tuple[Box, ...] = tuple(boxes)
        self.extent = extent
        if not self.boxes:
            raise GeometryError("a partition needs at least one box")
        self._lo = np.array([b.lo for b in self.boxes])
        self._hi = np.array([b.hi for b in self.boxes])
        self._closed_top = self._hi == np.asarray(extent.hi)
        if validate:
            check_tiling(extent, self.boxes, extent)

    @classmethod
    def trivial(cls, extent: Box) -> "Partition":
        return cls([extent], extent, validate=False)

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, idx: int) -> Box:
        return self.boxes[idx]

    def __iter__(self):
        return iter(self.boxes)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Partition)
            and self.extent == other.extent
            and self.boxes == other.boxes
        )

    def __repr__(self) -> str:
        return f"Partition(n={len(self)}, extent={self.extent})"

    def is_trivial(self) -> bool:
        return len(self.boxes) == 1

    def index(self, box: Box) -> int | None:
        try:
            return self.boxes.index(box)
        except ValueError:
            return None

    def locate(self, s) -> int:
        s = np.asarray(s, dtype=float)
        if not self.extent.contains(s):
            raise GeometryError(f"state {s} is outside the extent")
        upper_ok = (s < self._hi) | (self._closed_top & (s == self._hi))
        inside = np.all((s >= self._lo) & upper_ok, axis=1)
        hits = np.flatnonzero(inside)
        if hits.size == 0:  # pragma: no cover - guarded by the tiling invariant
            raise GeometryError(f"no cell contains {s}")
        return int(hits[0])

    def locate_many(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return np.array([self.locate(s) for s in states], dtype=int)

    def replace_box(self, idx: int, pieces: Sequence[Box]) -> "Partition":
        """New partition with cell ``idx`` removed and ``pieces`` appended."""
        check_tiling(self.boxes[idx], pieces, self.extent)
        boxes = self.boxes[:idx] + self.boxes[idx + 1:] + tuple(pieces)
        return Partition(boxes, self.extent, validate=False)

    def parents_in(self, older: "Partition") -> np.ndarray:
        """For each cell, the index of the cell of ``older`` that contains it."""
        out = np.empty(len(self), dtype=int)
        for i, b in enumerate(self.boxes):
            j = older.locate(b.center)
            if not b.issubset(older.boxes[j]):
                raise GeometryError(f"cell {i} is not inside any cell of the older partition")
            out[i] = j
        return out

    def is_refinement_of(self, older: "Partition") -> bool:
        try:
            self.parents_in(older)
        except GeometryError:
            return False
        return True

    def audit(self) -> None:
        """Check disjointness and cover; raises :class:`GeometryError`."""
        check_tiling(self.extent, self.boxes, self.extent)

    def to_dict(self, step: int = 0) -> dict:
        return {
            "extent": self.extent.to_list(),
            "boxes": [b.to_list() for b in self.boxes],
            "step": int(step),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Partition":
        try:
            extent = Box.from_list(data["extent"])
            boxes = [Box.from_list(b) for b in data["boxes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryError(f"malformed partition data: {exc}") from exc
        return cls(boxes, extent)


def save_partition(p: Partition, path, step: int = 0) -> None:
    # repr-precision floats in json round-trip bit-exactly
    Path(path).write_text(json.dumps(p.to_dict(step)))


def load_partition(path, extent: Box | None = None) -> Partition:
    """Load a partition snapshot, optionally checking it against ``extent``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GeometryError(f"cannot read partition from {path}: {exc}") from exc
    p = Partition.from_dict(data)
    if extent is not None and p.extent != extent:
        raise GeometryError(f"partition extent {p.extent} does not match {extent}")
    return p
