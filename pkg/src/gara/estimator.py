"""scikit-learn style wrapper around the training loop.

``GARA(...).fit()`` trains on a maze; the fitted estimator then maps states to
goal cells (:meth:`GARA.predict`) or to goal encodings (:meth:`GARA.transform`),
so a learned abstraction can be dropped into ordinary feature pipelines.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import Partition, goal_encoding
from .harness import RunConfig, run_training


class GARA(TransformerMixin, BaseEstimator):
    """Goal abstraction learned alongside a two-level policy.

    Parameters
    ----------
    maze : str
        Built-in maze name.
    variant : {"gara", "gara_planning", "handcrafted", "flat"}
    n_episodes : int
    random_state : int
        Master seed; every component draws from its own stream.
    config : dict, optional
        Hyperparameter overrides, same keys as the JSON run config.
    transfer_partition : str, optional
        Path of a saved partition to start from.
    """

    def __init__(
        self,
        maze="u_shaped",
        variant="gara",
        n_episodes=200,
        random_state=0,
        config=None,
        transfer_partition=None,
    ):
        self.maze = maze
        self.variant = variant
        self.n_episodes = n_episodes
        self.random_state = random_state
        self.config = config
        self.transfer_partition = transfer_partition

    def run_config(self) -> RunConfig:
        cfg = RunConfig(
            maze=self.maze,
            variant=self.variant,
            n_eps=self.n_episodes,
            seed=int(self.random_state or 0),
            transfer_partition=self.transfer_partition,
        )
        return cfg.with_overrides(self.config or {})

    def fit(self, X=None, y=None):
        """Run training. ``X`` and ``y`` are ignored; data comes from the maze."""
        self.report_ = run_training(self.run_config())
        self.partition_: Partition = self.report_.final_partition()
        self.q_table_ = np.asarray(self.report_.q_table)
        self.n_features_in_ = self.partition_.extent.dim
        return self

    def predict(self, X):
        """Index of the goal cell containing each state."""
        check_is_fitted(self, "partition_")
        X = check_array(X, dtype=np.float64)
        return self.partition_.locate_many(X)

    def transform(self, X):
        """Normalized ``[lo, hi]`` encoding of each state's goal cell."""
        cells = self.predict(X)
        p = self.partition_
        return np.array([goal_encoding(p[c], p.extent) for c in cells])

    def success_rate(self) -> float:
        check_is_fitted(self, "report_")
        return float(np.mean(self.report_.successes)) if self.report_.successes else 0.0
