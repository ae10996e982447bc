"""Command line entry point: ``gara train | export-graph | inspect-partition``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .geometry import GeometryError, Partition, load_partition
from .harness import VARIANTS, ConfigError, RunConfig, run_experiment
from .maze import MAZE_NAMES


def velocity_arrow(lo: float, hi: float, pos: str, neg: str) -> str:
    """Arrow for the sign of a velocity interval, plus the range if it is narrower.

    The full range ``[-1, 1]`` gets no annotation; an interval that straddles
    zero is shown as the interval alone.
    """
    if lo <= -1.0 and hi >= 1.0:
        return ""
    if lo >= 0.0 and hi > 0.0:
        return pos if (lo, hi) == (0.0, 1.0) else f"{pos}[{lo:g},{hi:g}]"
    if hi <= 0.0 and lo < 0.0:
        return neg if (lo, hi) == (-1.0, 0.0) else f"{neg}[{lo:g},{hi:g}]"
    return f"[{lo:g},{hi:g}]"


def describe_partition(p: Partition) -> list[str]:
    """One line per cell: position ranges followed by velocity-sign arrows."""
    lines = []
    for i, b in enumerate(p.boxes):
        text = f"{i:3d}  x [{b.lo[0]:g}, {b.hi[0]:g}]  y [{b.lo[1]:g}, {b.hi[1]:g}]"
        if len(b.lo) >= 4:
            arrows = [
                velocity_arrow(b.lo[2], b.hi[2], "→", "←"),
                velocity_arrow(b.lo[3], b.hi[3], "↑", "↓"),
            ]
            arrows = [a for a in arrows if a]
            if arrows:
                text += "  " + " ".join(arrows)
        lines.append(text)
    return lines


def _train(args) -> int:
    base = dict(maze=args.maze, variant=args.variant, n_eps=args.episodes,
                transfer_partition=args.transfer, max_env_steps=args.max_env_steps)
    cfg = RunConfig.from_json(args.config, **base) if args.config else RunConfig(**base)
    seeds = range(args.seed, args.seed + args.seeds)
    reports = run_experiment(cfg, seeds, out_dir=args.out_dir)
    for seed, rep in zip(seeds, reports):
        rate = sum(rep.successes) / max(1, rep.n_episodes)
        print(f"seed {seed}: {rep.n_episodes} episodes, success rate {rate:.2f}, "
              f"{len(rep.snapshots[-1]['boxes'])} cells")
    print(f"outputs in {args.out_dir}")
    return 0


def _report_path(path: Path) -> Path:
    return path / "report.json" if path.is_dir() else path


def _export_graph(args) -> int:
    report = json.loads(_report_path(Path(args.run)).read_text())
    dot = report.get("graph_dot", "")
    if args.output:
        Path(args.output).write_text(dot)
    else:
        sys.stdout.write(dot)
    return 0


def _inspect_partition(args) -> int:
    path = Path(args.path)
    if path.is_dir() or path.name == "report.json":
        data = json.loads(_report_path(path).read_text())
        p = Partition.from_dict(data["snapshots"][-1])
    else:
        p = load_partition(path)
    print(f"{len(p)} cells")
    print("\n".join(describe_partition(p)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gara", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train one or more seeds and write their outputs")
    tr.add_argument("--maze", choices=MAZE_NAMES, default="u_shaped")
    tr.add_argument("--variant", choices=VARIANTS, default="gara")
    tr.add_argument("--episodes", type=int, default=200)
    tr.add_argument("--seeds", type=int, default=1, help="number of seeds")
    tr.add_argument("--seed", type=int, default=0, help="first seed")
    tr.add_argument("--max-env-steps", type=int, default=None)
    tr.add_argument("--out-dir", default="out")
    tr.add_argument("--transfer", default=None, help="partition JSON to start from")
    tr.add_argument("--config", default=None, help="JSON file of hyperparameter overrides")
    tr.set_defaults(func=_train)

    eg = sub.add_parser("export-graph", help="print the goal graph of a run as DOT")
    eg.add_argument("run", help="run directory or its report.json")
    eg.add_argument("-o", "--output", default=None)
    eg.set_defaults(func=_export_graph)

    ip = sub.add_parser("inspect-partition", help="list the cells of a partition")
    ip.add_argument("path", help="partition JSON, run directory or report.json")
    ip.set_defaults(func=_inspect_partition)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seeds", 1) < 1 or getattr(args, "episodes", 0) < 0:
        parser.error("--seeds must be >= 1 and --episodes >= 0")
    try:
        return args.func(args)
    except (ConfigError, GeometryError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"gara: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
