"""Training loop, run configuration, multi-seed experiments and file outputs."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .agents import (
    ForwardModel,
    LowAgent,
    QTable,
    TransitionRecord,
    act_low,
    cluster_refine,
    learn_low,
    reward_low,
    select_goal_high,
    update_forward_model,
    update_high,
)
from .geometry import GeometryError, Partition, goal_encoding, load_partition, save_partition
from .maze import MAZE_NAMES, load_maze, reset, step
from .planner import build_graph, plan_goal
from .reachability import SplitConfig, refine_goals

log = logging.getLogger(__name__)

VARIANTS = ("gara", "gara_planning", "handcrafted", "flat")
# hyperparameters a JSON config may override
HYPER_KEYS = (
    "t_re", "t_unre", "k", "eps_decay", "lr_low", "lr_fk", "gamma_lo", "gamma_hi",
    "dbscan_eps", "dbscan_min_pts", "W", "stability_tol", "min_width", "max_leaves",
    "replay_capacity", "batch_size", "target_update", "max_steps", "alpha_hi",
    "eps_min", "eps_hi_min", "fk_epochs", "fk_batch", "fk_eval_records",
    "max_env_steps", "optimizer_low", "cluster_positions_only", "merge_siblings",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    maze: str = "u_shaped"
    variant: str = "gara"
    n_eps: int = 200
    seed: int = 0
    k: int = 5
    max_steps: int = 200
    max_env_steps: int | None = None
    transfer_partition: str | None = None
    test_mode: bool = False
    # low level
    lr_low: float = 0.001
    gamma_lo: float = 0.95
    eps_decay: float = 0.9995
    eps_min: float = 0.01
    replay_capacity: int = 100_000
    batch_size: int = 64
    target_update: int = 20
    optimizer_low: str = "adam"
    # high level
    alpha_hi: float = 0.1
    gamma_hi: float = 0.9
    eps_hi_min: float = 0.05
    # forward model and refinement
    lr_fk: float = 0.1
    fk_epochs: int = 5
    fk_batch: int = 32
    fk_eval_records: int = 256
    W: int = 5
    stability_tol: float = 0.3
    t_re: float = 0.9
    t_unre: float = 0.1
    min_width: float = 0.02
    max_leaves: int = 64
    merge_siblings: bool = True
    # clustering fallback
    dbscan_eps: float = 0.1
    dbscan_min_pts: int = 5
    cluster_positions_only: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.maze not in MAZE_NAMES:
            raise ConfigError(f"unknown maze {self.maze!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.max_steps < self.k:
            raise ConfigError("max_steps must be >= k")
        if self.n_eps < 0:
            raise ConfigError("n_eps must be >= 0")
        try:
            self.split_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def split_config(self) -> SplitConfig:
        return SplitConfig(
            self.t_re, self.t_unre, self.min_width, self.max_leaves, self.merge_siblings
        )

    def with_overrides(self, overrides: dict) -> "RunConfig":
        unknown = set(overrides) - set(HYPER_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **overrides)

    @classmethod
    def from_json(cls, path, **base) -> "RunConfig":
        try:
            overrides = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls(**base).with_overrides(overrides)


@dataclass
class RunReport:
    config: dict
    successes: list[bool] = field(default_factory=list)
    episode_steps: list[int] = field(default_factory=list)
    env_steps: list[int] = field(default_factory=list)
    n_cells: list[int] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    q_table: list[list[float]] = field(default_factory=list)
    graph_dot: str = ""
    seconds: float = 0.0
    memory: list = field(default_factory=list, repr=False)

    @property
    def n_episodes(self) -> int:
        return len(self.successes)

    def final_partition(self) -> Partition:
        return Partition.from_dict(self.snapshots[-1])

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "memory"}


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator per component, derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(label.encode()),)))


def handcrafted_partition(maze: str) -> Partition:
    text = resources.files("gara.data.handcrafted").joinpath(f"{maze}.json").read_text()
    return Partition.from_dict(json.loads(text))


def initial_partition(cfg: RunConfig, extent) -> Partition:
    if cfg.variant == "handcrafted":
        p = handcrafted_partition(cfg.maze)
        if p.extent != extent:
            raise ConfigError("handcrafted partition does not match the maze extent")
        return p
    if cfg.transfer_partition:
        try:
            return load_partition(cfg.transfer_partition, extent=extent)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc
    return Partition.trivial(extent)


class _Audit:
    """In-run invariant checks enabled by ``RunConfig.test_mode``."""

    def __init__(self, p: Partition):
        self.history = [p]

    def check(self, p: Partition) -> None:
        p.audit()
        if not p.is_refinement_of(self.history[-1]):
            raise AssertionError("refinement chain broken")
        self.history.append(p)


def run_training(cfg: RunConfig) -> RunReport:
    """Train one seed of the configured variant and return its report."""
    cfg.validate()
    t0 = time.perf_counter()
    maze = load_maze(cfg.maze)
    extent = maze.extent
    rng_env = rng_stream(cfg.seed, "env")
    rng_low = rng_stream(cfg.seed, "low")
    rng_high = rng_stream(cfg.seed, "high")
    fk_seed = int(rng_stream(cfg.seed, "forward_model").integers(2**31))

    partition = initial_partition(cfg, extent)
    refine = cfg.variant in ("gara", "gara_planning")
    q = QTable(len(partition), cfg.alpha_hi, cfg.gamma_hi)
    low = LowAgent(
        extent,
        rng_low,
        lr=cfg.lr_low,
        gamma=cfg.gamma_lo,
        eps_decay=cfg.eps_decay,
        eps_min=cfg.eps_min,
        replay_capacity=cfg.replay_capacity,
        batch_size=cfg.batch_size,
        target_update=cfg.target_update,
        optimizer=cfg.optimizer_low,
    )
    fm = ForwardModel(
        extent,
        lr=cfg.lr_fk,
        batch_size=cfg.fk_batch,
        epochs=cfg.fk_epochs,
        window=cfg.W,
        stability_tol=cfg.stability_tol,
        eval_records=cfg.fk_eval_records,
        random_state=fk_seed,
    )
    split_cfg = cfg.split_config()
    audit = _Audit(partition) if cfg.test_mode else None

    report = RunReport(config=dataclasses.asdict(cfg))
    report.snapshots.append(partition.to_dict(0))
    memory: list[TransitionRecord] = []
    eps_hi = 1.0
    total_steps = 0

    for episode in range(cfg.n_eps):
        if cfg.max_env_steps is not None and total_steps >= cfg.max_env_steps:
            break
        graph = build_graph(partition, memory) if cfg.variant == "gara_planning" else None
        target = graph.target() if graph is not None else None

        def choose(cell):
            nonlocal eps_hi
            if target is not None:
                goal = plan_goal(graph, cell, target, rng_high)
            else:
                goal = select_goal_high(q, cell, eps_hi, rng_high)
            eps_hi = max(cfg.eps_hi_min, eps_hi * cfg.eps_decay)
            return goal

        s = reset(maze, rng_env)
        visited = [s]
        s_init, g_s = s, partition.locate(s)
        g_d = choose(g_s)
        goal_box = partition[g_d]
        enc = goal_encoding(goal_box, extent)
        t = seg_steps = 0
        seg_r = 0.0
        done = False
        while True:
            a = act_low(low, s, enc, rng_low)
            s_next, r_ext, done = step(s, a, maze)
            in_goal = goal_box.contains(s_next)
            low.remember(s, enc, a, reward_low(in_goal, r_ext), s_next, done or in_goal)
            learn_low(low, rng_low)
            s = s_next
            visited.append(s)
            t += 1
            seg_steps += 1
            total_steps += 1
            seg_r = max(seg_r, r_ext)
            truncated = t >= cfg.max_steps
            if done or in_goal or t % cfg.k == 0 or truncated:
                rec = TransitionRecord(
                    tuple(s_init), g_s, tuple(s), g_d, seg_r, done, episode,
                    partition[g_s], goal_box, seg_steps, in_goal,
                )
                memory.append(rec)
                next_cell = partition.locate(s)
                update_high(q, rec, next_cell)
                if done or truncated:
                    break
                s_init, g_s = s, next_cell
                g_d = choose(g_s)
                goal_box = partition[g_d]
                enc = goal_encoding(goal_box, extent)
                seg_steps = 0
                seg_r = 0.0

        report.successes.append(bool(done))
        report.episode_steps.append(t)
        report.env_steps.append(total_steps)

        if refine:
            episode_recs = [r for r in memory if r.episode == episode]
            reached = {(r.g_s, r.g_d) for r in episode_recs if r.reached}
            # guard: the episode's last goal cell has been reached somewhere in memory
            goal_seen = any(r.reached and r.goal == goal_box for r in memory)
            if not partition.is_trivial() and goal_seen:
                update_forward_model(fm, memory, cfg.k)
                new = refine_goals(partition, reached, fm.network(), fm.stats_, split_cfg)
                kind = "refine"
            else:
                cells = partition.locate_many(visited)
                cell = Counter(cells.tolist()).most_common(1)[0][0]
                box = partition[cell]
                pts = [r.s_init for r in memory if box.contains(r.s_init)]
                pts += [r.s_end for r in memory if box.contains(r.s_end)]
                new = cluster_refine(
                    partition, pts, cell, cfg.dbscan_eps, cfg.dbscan_min_pts,
                    dims=(0, 1) if cfg.cluster_positions_only else None,
                )
                kind = "cluster"
            if new is not partition and len(new) != len(partition):
                q.remap(new.parents_in(partition))
                if audit is not None:
                    audit.check(new)
                report.events.append(
                    {"episode": episode, "step": total_steps, "kind": kind,
                     "before": len(partition), "after": len(new)}
                )
                log.debug("episode %d: %s %d -> %d cells", episode, kind, len(partition), len(new))
                partition = new
                report.snapshots.append(partition.to_dict(total_steps))
        report.n_cells.append(len(partition))

    report.q_table = q.values.tolist()
    report.graph_dot = build_graph(partition, memory).to_dot()
    report.memory = memory
    report.seconds = time.perf_counter() - t0
    return report


def rolling_success(successes, window: int = 20) -> np.ndarray:
    s = np.asarray(successes, dtype=float)
    if s.size == 0:
        return s
    c = np.concatenate([[0.0], np.cumsum(s)])
    idx = np.arange(1, s.size + 1)
    start = np.maximum(0, idx - window)
    return (c[idx] - c[start]) / (idx - start)


def curves(reports, window: int = 20):
    """Per-episode mean/std over seeds of rolling success, and mean env steps."""
    n = min(r.n_episodes for r in reports)
    rolled = np.array([rolling_success(r.successes[:n], window) for r in reports]).reshape(len(reports), n)
    steps = np.array([r.env_steps[:n] for r in reports], dtype=float).reshape(len(reports), n)
    return rolled.mean(axis=0), rolled.std(axis=0), steps.mean(axis=0)


def export_curves(reports, path, window: int = 20) -> None:
    if not reports:
        raise ValueError("need at least one report")
    mean, std, steps = curves(reports, window)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "mean_success", "std_success", "env_steps"])
        for i in range(len(mean)):
            writer.writerow([i, f"{mean[i]:.6g}", f"{std[i]:.6g}", f"{steps[i]:.6g}"])


def success_at_steps(report: RunReport, grid, window: int = 20) -> np.ndarray:
    """Rolling success of one run sampled on a grid of environment steps."""
    rolled = rolling_success(report.successes, window)
    steps = np.asarray(report.env_steps)
    idx = np.searchsorted(steps, grid, side="right") - 1
    return np.where(idx >= 0, rolled[np.clip(idx, 0, None)] if rolled.size else 0.0, 0.0)


def area_under_curve(reports, max_env_steps: int, n_points: int = 100, window: int = 20) -> float:
    """Mean over seeds and over an even env-step grid of the rolling success."""
    grid = np.linspace(0, max_env_steps, n_points + 1)[1:]
    return float(np.mean([success_at_steps(r, grid, window).mean() for r in reports]))


def run_id(cfg: RunConfig) -> str:
    tag = f"{cfg.maze}_{cfg.variant}"
    if cfg.transfer_partition:
        tag += "_T"
    return f"{tag}_seed{cfg.seed}"


def write_run(report: RunReport, cfg: RunConfig, out_dir) -> Path:
    """Write ``report.json``, partition snapshots, curves and graph for one run."""
    run_dir = Path(out_dir) / run_id(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(json.dumps(report.to_dict()))
    for snap in report.snapshots:
        (run_dir / f"partition_{snap['step']}.json").write_text(json.dumps(snap))
    export_curves([report], run_dir / "curves.csv")
    (run_dir / "graph.dot").write_text(report.graph_dot)
    return run_dir


def run_experiment(cfg: RunConfig, seeds, out_dir=None) -> list[RunReport]:
    reports = []
    for seed in seeds:
        run_cfg = dataclasses.replace(cfg, seed=seed)
        report = run_training(run_cfg)
        log.info(
            "%s: %d episodes, %d env steps, %d cells, success rate %.2f (%.1fs)",
            run_id(run_cfg), report.n_episodes, report.env_steps[-1] if report.env_steps else 0,
            len(report.snapshots[-1]["boxes"]), np.mean(report.successes) if report.successes else 0.0,
            report.seconds,
        )
        if out_dir is not None:
            write_run(report, run_cfg, out_dir)
        reports.append(report)
    if out_dir is not None and reports:
        export_curves(reports, Path(out_dir) / "curves.csv")
    return reports


__all__ = [
    "ConfigError",
    "RunConfig",
    "RunReport",
    "area_under_curve",
    "export_curves",
    "handcrafted_partition",
    "load_partition",
    "run_experiment",
    "run_training",
    "save_partition",
]
