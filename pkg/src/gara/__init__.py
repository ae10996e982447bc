"""Goal abstraction via reachability analysis for feudal hierarchical RL."""
from .estimator import GARA
from .geometry import Box, Partition, load_partition, save_partition
from .harness import RunConfig, RunReport, export_curves, run_experiment, run_training
from .maze import Action, MazeConfig, State, load_maze

__all__ = [
    "GARA",
    "Action",
    "Box",
    "MazeConfig",
    "Partition",
    "RunConfig",
    "RunReport",
    "State",
    "export_curves",
    "load_maze",
    "load_partition",
    "run_experiment",
    "run_training",
    "save_partition",
]
__version__ = "0.1.0"
