"""Subgoal graph built from high-level memory, and shortest-path goal choice."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Partition


@dataclass
class EdgeInfo:
    max_r_ext: float
    count: int = 1

    @property
    def weight(self) -> float:
        return 1.0 / (1.0 + self.max_r_ext)


@dataclass
class GoalGraph:
    n_nodes: int
    edges: dict[tuple[int, int], EdgeInfo] = field(default_factory=dict)

    @property
    def nodes(self) -> range:
        return range(self.n_nodes)

    def add_transition(self, src: int, dst: int, r_ext: float) -> None:
        info = self.edges.get((src, dst))
        if info is None:
            self.edges[(src, dst)] = EdgeInfo(float(r_ext))
        else:
            info.max_r_ext = max(info.max_r_ext, float(r_ext))
            info.count += 1

    def weight(self, src: int, dst: int) -> float:
        return self.edges[(src, dst)].weight

    def successors(self, node: int) -> list[tuple[int, float]]:
        return sorted((d, e.weight) for (s, d), e in self.edges.items() if s == node)

    def path_cost(self, path) -> float:
        return sum(self.weight(a, b) for a, b in zip(path, path[1:]))

    def target(self) -> int | None:
        """Cell with the highest positive incoming reward, if any reward was seen."""
        best, best_r = None, 0.0
        for (_, d), e in sorted(self.edges.items()):
            if e.max_r_ext > best_r:
                best, best_r = d, e.max_r_ext
        return best

    def to_dot(self) -> str:
        lines = ["digraph H {"]
        lines.extend(f"  {n};" for n in self.nodes)
        for (s, d), e in sorted(self.edges.items()):
            lines.append(f'  {s} -> {d} [label="w={e.weight:.3g}, n={e.count}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def save_dot(self, path) -> None:
        Path(path).write_text(self.to_dot())


def build_graph(p: Partition, mem) -> GoalGraph:
    """Edges for every recorded segment that ended in its goal cell.

    Endpoints are located in the current partition, so records made before
    a refinement still land on valid nodes.
    """
    g = GoalGraph(len(p))
    for rec in mem:
        if not rec.reached:
            continue
        src = p.locate(rec.s_init)
        dst = p.locate(rec.s_end)
        if src != dst:
            g.add_transition(src, dst, rec.r_ext)
    return g


def shortest_path(g: GoalGraph, src: int, dst: int) -> list[int] | None:
    """Dijkstra; equal-cost paths resolve to the lexicographically smallest."""
    # heap entries carry the whole path so equal costs compare by node sequence
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == dst:
            return list(path)
        for nxt, w in g.successors(node):
            if nxt not in done:
                heapq.heappush(heap, (cost + w, path + (nxt,)))
    return None


def plan_goal(g: GoalGraph, current: int, target: int | None, rng: np.random.Generator) -> int:
    """Next cell on the shortest path to ``target``, else a random other cell."""
    if target is not None and target != current:
        path = shortest_path(g, current, target)
        if path is not None and len(path) >= 2:
            return path[1]
    if g.n_nodes == 1:
        return current
    j = int(rng.integers(g.n_nodes - 1))
    return j + 1 if j >= current else j
