"""Deterministic point-mass mazes with a sparse exit reward.

The state is ``(x, y, v_x, v_y)``. Each action accelerates one axis by
``+-0.1`` for the current step, velocities are clamped to ``[-1, 1]`` and the
position advances by one explicit Euler step of length ``dt``. Motion stops
just short of the first wall or boundary hit and the velocity component
normal to that surface is zeroed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geometry import Box

ACCEL = 0.1
V_MAX = 1.0
CONTACT_MARGIN = 1e-6
MAZE_NAMES = ("u_shaped", "four_rooms", "n_shaped", "two_paths", "u_shaped_switched")


class MazeConfigError(ValueError):
    pass


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


# (axis, sign) per action; axis 0 is x, 1 is y
_ACTION_EFFECT = {
    Action.UP: (1, 1.0),
    Action.DOWN: (1, -1.0),
    Action.LEFT: (0, -1.0),
    Action.RIGHT: (0, 1.0),
}


class State(NamedTuple):
    x: float
    y: float
    v_x: float
    v_y: float


@dataclass(frozen=True)
class MazeConfig:
    name: str
    bounds: Box
    walls: tuple[Box, ...]
    start_region: Box
    exit_region: Box
    dt: float = 1.0
    persistent_acceleration: bool = False

    def __post_init__(self):
        for label, region in (("start_region", self.start_region), ("exit_region", self.exit_region)):
            if not region.issubset(self.bounds):
                raise MazeConfigError(f"{label} lies outside the maze bounds")
            for w in self.walls:
                if _overlaps_open(region, w):
                    raise MazeConfigError(f"{label} intersects wall {w.to_list()}")

    @property
    def extent(self) -> Box:
        """Full state-space box: position bounds times ``[-1, 1]`` velocities."""
        return Box(self.bounds.lo + (-V_MAX, -V_MAX), self.bounds.hi + (V_MAX, V_MAX))

    def in_wall(self, x: float, y: float) -> bool:
        return any(w.lo[0] < x < w.hi[0] and w.lo[1] < y < w.hi[1] for w in self.walls)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bounds": self.bounds.to_list(),
            "walls": [w.to_list() for w in self.walls],
            "start_region": self.start_region.to_list(),
            "exit_region": self.exit_region.to_list(),
        }

    @classmethod
    def from_dict(cls, data: dict, name: str | None = None) -> "MazeConfig":
        try:
            return cls(
                name=name or data.get("name", "custom"),
                bounds=Box.from_list(data["bounds"]),
                walls=tuple(Box.from_list(w) for w in data["walls"]),
                start_region=Box.from_list(data["start_region"]),
                exit_region=Box.from_list(data["exit_region"]),
                persistent_acceleration=bool(data.get("persistent_acceleration", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MazeConfigError):
                raise
            raise MazeConfigError(f"malformed maze description: {exc}") from exc


def _overlaps_open(a: Box, b: Box) -> bool:
    return all(max(a.lo[d], b.lo[d]) < min(a.hi[d], b.hi[d]) for d in range(2))


def load_maze(name: str) -> MazeConfig:
    """Built-in maze geometry by name."""
    if name not in MAZE_NAMES:
        raise MazeConfigError(f"unknown maze {name!r}; expected one of {', '.join(MAZE_NAMES)}")
    text = resources.files("gara.data.mazes").joinpath(f"{name}.json").read_text()
    return MazeConfig.from_dict(json.loads(text), name=name)


def load_maze_file(path) -> MazeConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MazeConfigError(f"cannot read maze file {path}: {exc}") from exc
    return MazeConfig.from_dict(data, name=data.get("name", Path(path).stem))


def reset(config: MazeConfig, rng_seed) -> State:
    """Uniform start state inside the start region, at rest."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lo = np.array(config.start_region.lo)
    hi = np.array(config.start_region.hi)
    p = lo + rng.random(2) * (hi - lo)
    return State(float(p[0]), float(p[1]), 0.0, 0.0)


def _ray_box_entry(x, y, dx, dy, box: Box):
    """Entry time in [0, 1] and hit axis of the segment against a closed box."""
    t_near, t_far, axis = -np.inf, np.inf, -1
    for a, (p, d) in enumerate(((x, dx), (y, dy))):
        lo, hi = box.lo[a], box.hi[a]
        if d == 0.0:
            if p < lo or p > hi:
                return None
            continue
        t1 = (lo - p) / d
        t2 = (hi - p) / d
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_near:
            t_near, axis = t1, a
        t_far = min(t_far, t2)
    if t_near > t_far or t_far < 0.0 or t_near > 1.0 or t_near < 0.0:
        return None
    return t_near, axis


def _move(config: MazeConfig, x, y, vx, vy):
    dx, dy = vx * config.dt, vy * config.dt
    if dx == 0.0 and dy == 0.0:
        return x, y, vx, vy
    t_hit, hit_axis = 1.0, -1
    for w in config.walls:
        hit = _ray_box_entry(x, y, dx, dy, w)
        if hit is not None and hit[0] < t_hit:
            t_hit, hit_axis = hit
    b = config.bounds
    for a, (p, d) in enumerate(((x, dx), (y, dy))):
        if d > 0.0:
            t = (b.hi[a] - p) / d
        elif d < 0.0:
            t = (b.lo[a] - p) / d
        else:
            continue
        if t < t_hit:
            t_hit, hit_axis = t, a
    if hit_axis < 0:
        return x + dx, y + dy, vx, vy
    dist = float(np.hypot(dx, dy))
    t_stop = max(0.0, t_hit - CONTACT_MARGIN / dist)
    nx, ny = x + t_stop * dx, y + t_stop * dy
    if hit_axis == 0:
        vx = 0.0
    else:
        vy = 0.0
    return nx, ny, vx, vy


def _clamp(v: float) -> float:
    return max(min(v, V_MAX), -V_MAX)


def _finish(config: MazeConfig, x, y, vx, vy):
    ex = config.exit_region
    done = ex.lo[0] <= x <= ex.hi[0] and ex.lo[1] <= y <= ex.hi[1]
    return State(float(x), float(y), float(vx), float(vy)), (1.0 if done else 0.0), bool(done)


def step(state: State, action, config: MazeConfig):
    """Advance one step; returns ``(next_state, r_ext, done)``.

    The chosen axis is accelerated by ``+-0.1`` for this step only; the other
    axis receives no acceleration.
    """
    axis, sign = _ACTION_EFFECT[Action(action)]
    vx, vy = state.v_x, state.v_y
    if axis == 0:
        vx = _clamp(vx + sign * ACCEL)
    else:
        vy = _clamp(vy + sign * ACCEL)
    x, y, vx, vy = _move(config, state.x, state.y, vx, vy)
    return _finish(config, x, y, vx, vy)


@dataclass
class MazeEnv:
    """Stateful wrapper with an episode step cap.

    With ``config.persistent_acceleration`` the acceleration is kept as
    hidden state: the chosen axis accumulates ``+-0.1`` and the other axis
    moves ``0.1`` toward zero.
    """

    config: MazeConfig
    max_steps: int = 200
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    state: State | None = None
    t: int = 0
    accel: list = field(default_factory=lambda: [0.0, 0.0])

    def reset(self) -> State:
        self.state = reset(self.config, self.rng)
        self.t = 0
        self.accel = [0.0, 0.0]
        return self.state

    def step(self, action):
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.config.persistent_acceleration:
            nxt, r, done = self._step_persistent(action)
        else:
            nxt, r, done = step(self.state, action, self.config)
        self.state = nxt
        self.t += 1
        truncated = self.t >= self.max_steps and not done
        return nxt, r, done, truncated

    def _step_persistent(self, action):
        axis, sign = _ACTION_EFFECT[Action(action)]
        other = 1 - axis
        self.accel[axis] += sign * ACCEL
        a = self.accel[other]
        self.accel[other] = 0.0 if abs(a) <= ACCEL else a - np.sign(a) * ACCEL
        s = self.state
        vx = _clamp(s.v_x + self.accel[0])
        vy = _clamp(s.v_y + self.accel[1])
        return _finish(self.config, *_move(self.config, s.x, s.y, vx, vy))
