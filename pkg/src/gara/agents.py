"""Agents of the two-level hierarchy.

* :class:`QTable` with :func:`select_goal_high` / :func:`update_high` is the
  tabular high-level policy over partition cells.
* :class:`LowAgent` is a goal-conditioned DQN whose goal input is the
  normalized ``[lo, hi]`` encoding of the target cell.
* :class:`ForwardModel` regresses the state reached after a ``k``-step
  segment and tracks per-edge validation errors.
* :func:`cluster_refine` is the density-based fallback split.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.cluster import DBSCAN
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .geometry import Box, Partition, complement_decompose, goal_encoding, normalize, volume
from .maze import Action
from .reachability import EdgeErrorStats
from .tinynet import Adam, Mlp, forward, mse_gradients, sgd_step

__all__ = [
    "ForwardModel",
    "LowAgent",
    "QTable",
    "TransitionRecord",
    "act_low",
    "cluster_refine",
    "dbscan_labels",
    "goal_encoding",
    "learn_low",
    "reward_low",
    "select_goal_high",
    "update_forward_model",
    "update_high",
]

N_ACTIONS = len(Action)


@dataclass
class TransitionRecord:
    s_init: tuple
    g_s: int
    s_end: tuple
    g_d: int
    r_ext: float
    done: bool
    episode: int
    source: Box
    goal: Box
    steps: int
    reached: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s_init"] = list(self.s_init)
        d["s_end"] = list(self.s_end)
        d["source"] = self.source.to_list()
        d["goal"] = self.goal.to_list()
        return d


def dump_memory(records, path) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


# -- high level ---------------------------------------------------------------


class QTable:
    """Dense ``(src cell, dst cell)`` value table."""

    def __init__(self, n_cells: int, alpha: float = 0.1, gamma: float = 0.9):
        self.values = np.zeros((n_cells, n_cells))
        self.alpha = alpha
        self.gamma = gamma

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        self.values[key] = value

    def best_value(self, cell: int) -> float:
        row = self.values[cell]
        if self.n_cells == 1:
            return float(row[0])
        return float(np.max(np.delete(row, cell)))

    def remap(self, parents: np.ndarray) -> None:
        """Children inherit the rows and columns of the cell they came from."""
        parents = np.asarray(parents, dtype=int)
        self.values = self.values[np.ix_(parents, parents)].copy()

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["src", "dst", "value"])
            n = self.n_cells
            for i in range(n):
                for j in range(n):
                    writer.writerow([i, j, repr(float(self.values[i, j]))])


def select_goal_high(q: QTable, g_s: int, eps_hi: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy destination cell, never ``g_s`` unless it is the only cell."""
    n = q.n_cells
    if n == 1:
        return 0
    if rng.random() < eps_hi:
        j = int(rng.integers(n - 1))
        return j + 1 if j >= g_s else j
    row = q.values[g_s].copy()
    row[g_s] = -np.inf
    return int(np.argmax(row))


def update_high(q: QTable, rec: TransitionRecord, next_cell: int) -> float:
    """One Q-learning update for a finished segment; returns the new value."""
    bootstrap = 0.0 if rec.done else q.gamma * q.best_value(next_cell)
    old = q.values[rec.g_s, rec.g_d]
    new = old + q.alpha * (rec.r_ext + bootstrap - old)
    q.values[rec.g_s, rec.g_d] = new
    return float(new)


def reward_low(in_goal: bool, r_ext: float) -> float:
    return (1.0 if in_goal else 0.0) + float(r_ext)


# -- low level ----------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity ring buffer of ``(obs, action, reward, next_obs, terminal)``."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros(self.capacity, dtype=int)
        self.rewards = np.zeros(self.capacity)
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, terminal) -> None:
        i = self._pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = terminal
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch_size)
        return (
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.terminal[idx],
        )


class LowAgent:
    """Goal-conditioned DQN over ``[normalized state, goal encoding]``."""

    def __init__(
        self,
        extent: Box,
        rng: np.random.Generator,
        hidden=(16, 32),
        lr: float = 0.01,
        gamma: float = 0.95,
        eps_decay: float = 0.9995,
        eps_min: float = 0.01,
        replay_capacity: int = 100_000,
        batch_size: int = 64,
        target_update: int = 20,
        optimizer: str = "adam",
    ):
        if optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {optimizer!r}")
        self.extent = extent
        dim = extent.dim
        self.obs_dim = 3 * dim
        self.online = Mlp.random([self.obs_dim, *hidden, N_ACTIONS], rng)
        self.target = self.online.copy()
        self.adam = Adam(self.online, lr) if optimizer == "adam" else None
        self.replay = ReplayBuffer(replay_capacity, self.obs_dim)
        self.lr = lr
        self.gamma = gamma
        self.eps = 1.0
        self.eps_decay = eps_decay
        self.eps_min = eps_min
        self.batch_size = batch_size
        self.target_update = target_update
        self.n_updates = 0

    def observe(self, s, enc) -> np.ndarray:
        return np.concatenate([normalize(s, self.extent), enc])

    def q_values(self, s, enc) -> np.ndarray:
        return forward(self.online, self.observe(s, enc))

    def remember(self, s, enc, action, reward, s_next, terminal) -> None:
        self.replay.add(self.observe(s, enc), int(action), reward, self.observe(s_next, enc), terminal)


def act_low(agent: LowAgent, s, enc, rng: np.random.Generator) -> Action:
    """Epsilon-greedy action, then one multiplicative decay of epsilon."""
    if rng.random() < agent.eps:
        a = int(rng.integers(N_ACTIONS))
    else:
        a = int(np.argmax(agent.q_values(s, enc)))
    agent.eps = max(agent.eps_min, agent.eps * agent.eps_decay)
    return Action(a)


def dqn_targets(agent: LowAgent, rewards, next_obs, terminal) -> np.ndarray:
    next_q = forward(agent.target, next_obs).max(axis=1)
    return rewards + agent.gamma * np.where(terminal, 0.0, next_q)


def learn_low(agent: LowAgent, rng: np.random.Generator, batch_size: int | None = None):
    """One DQN update; ``None`` while the replay holds fewer than a batch."""
    batch_size = batch_size or agent.batch_size
    if len(agent.replay) < batch_size:
        return None
    obs, actions, rewards, next_obs, terminal = agent.replay.sample(batch_size, rng)
    targets = dqn_targets(agent, rewards, next_obs, terminal)
    y = np.zeros((batch_size, N_ACTIONS))
    mask = np.zeros((batch_size, N_ACTIONS))
    rows = np.arange(batch_size)
    y[rows, actions] = targets
    mask[rows, actions] = 1.0
    loss, grads = mse_gradients(agent.online, obs, y, mask)
    if agent.adam is not None:
        agent.adam.step(agent.online, grads)
    else:
        sgd_step(agent.online, grads, agent.lr)
    agent.n_updates += 1
    if agent.n_updates % agent.target_update == 0:
        agent.target.load_from(agent.online)
    return loss


# -- forward model ------------------------------------------------------------


class ForwardModel(RegressorMixin, BaseEstimator):
    """Regressor from ``[state, goal encoding]`` to the segment end state.

    States are given in raw units; the network is trained on
    extent-normalized states and :meth:`network` folds the scaling back into
    the first and last layers so the returned net works in raw units.
    """

    def __init__(
        self,
        extent: Box | None = None,
        hidden=(16, 16),
        lr: float = 0.1,
        batch_size: int = 32,
        epochs: int = 5,
        window: int = 5,
        stability_tol: float = 0.1,
        eval_records: int = 32,
        random_state=None,
    ):
        self.extent = extent
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.window = window
        self.stability_tol = stability_tol
        self.eval_records = eval_records
        self.random_state = random_state

    def _init(self, n_features: int) -> None:
        self.rng_ = np.random.default_rng(self.random_state)
        self.dim_ = self.extent.dim
        self.n_features_in_ = n_features
        self.net_ = Mlp.random([n_features, *self.hidden, self.dim_], self.rng_)
        self.stats_ = EdgeErrorStats(self.window, self.stability_tol)
        self._lo = np.asarray(self.extent.lo)
        self._scale = np.asarray(self.extent.hi) - self._lo

    def _scale_x(self, X):
        Xn = X.copy()
        Xn[:, : self.dim_] = (X[:, : self.dim_] - self._lo) / self._scale
        return Xn

    def _epoch(self, Xn, Yn) -> float:
        order = self.rng_.permutation(len(Xn))
        losses = []
        for start in range(0, len(order), self.batch_size):
            idx = order[start : start + self.batch_size]
            loss, grads = mse_gradients(self.net_, Xn[idx], Yn[idx])
            sgd_step(self.net_, grads, self.lr)
            losses.append(loss)
        return float(np.mean(losses))

    def partial_fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if not hasattr(self, "net_"):
            self._init(X.shape[1])
        Xn = self._scale_x(X)
        Yn = (y - self._lo) / self._scale
        for _ in range(self.epochs):
            self._epoch(Xn, Yn)
        return self

    def fit(self, X, y):
        for attr in ("net_", "stats_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, y)

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return forward(self.net_, self._scale_x(X)) * self._scale + self._lo

    def network(self) -> Mlp:
        """Copy of the net with input/output scaling folded in (raw units)."""
        check_is_fitted(self, "net_")
        net = self.net_.copy()
        first, last = net.layers[0], net.layers[-1]
        d = self.dim_
        first.b = first.b - first.w[:, :d] @ (self._lo / self._scale)
        first.w[:, :d] = first.w[:, :d] / self._scale
        last.w = last.w * self._scale[:, None]
        last.b = last.b * self._scale + self._lo
        return net

    def mse(self, X, y) -> float:
        """Mean over samples of the summed squared error in normalized units."""
        resid = (self.predict(X) - np.asarray(y)) / self._scale
        return float(np.mean(np.sum(resid**2, axis=1)))


def _fk_dataset(records, extent: Box):
    X = np.array([np.concatenate([r.s_init, goal_encoding(r.goal, extent)]) for r in records])
    y = np.array([r.s_end for r in records], dtype=float)
    return X, y


def update_forward_model(fm: ForwardModel, mem, k: int | None = None) -> dict:
    """Train on the latest episode's complete segments and log per-edge errors.

    Segments count as complete when they lasted ``k`` steps or ended in their
    goal cell. Each edge seen in that episode gets a held-out error: the MSE,
    before this update, over its most recent complete records in ``mem``.
    Returns ``{(src box, dst box): mse}``.
    """
    if not mem:
        return {}
    last = max(r.episode for r in mem)

    def complete(r):
        return r.reached or k is None or r.steps == k

    latest = [r for r in mem if r.episode == last and complete(r)]
    if not latest:
        return {}
    extent = fm.extent
    if not hasattr(fm, "net_"):
        X, y = _fk_dataset(latest, extent)
        fm._init(X.shape[1])
    by_edge: dict = {}
    for r in mem:
        if complete(r):
            by_edge.setdefault((r.source, r.goal), []).append(r)
    errors = {}
    for edge in dict.fromkeys((r.source, r.goal) for r in latest):
        recent = by_edge[edge][-fm.eval_records :]
        X, y = _fk_dataset(recent, extent)
        err = fm.mse(X, y)
        fm.stats_.record(edge, err)
        errors[edge] = err
    X, y = _fk_dataset(latest, extent)
    fm.partial_fit(X, y)
    return errors


# -- clustering ---------------------------------------------------------------


def dbscan_labels(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels (``-1`` for noise); ``min_pts`` counts the point itself."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    return DBSCAN(eps=eps, min_samples=min_pts).fit(points).labels_


def cluster_refine(
    p: Partition,
    visited,
    cell: int,
    eps: float = 0.05,
    min_pts: int = 5,
    margin: float | None = None,
    rel_tol: float = 1e-3,
    dims=None,
) -> Partition:
    """Carve the bounding box of the largest visited-state cluster out of ``cell``.

    Clustering runs in extent-normalized coordinates. The bounding box is
    padded by ``margin`` (default ``eps / 2``, normalized) and clipped to the
    cell so single-velocity clusters still give a full-dimensional box.
    With ``dims`` the box is only cut along those dimensions. Returns ``p``
    unchanged when there is no cluster or the box would cover almost the
    whole cell.
    """
    visited = np.atleast_2d(np.asarray(visited, dtype=float))
    if visited.size == 0:
        return p
    box = p.boxes[cell]
    ext = p.extent
    pts = normalize(visited, ext)
    labels = dbscan_labels(pts, eps, min_pts)
    clustered = labels[labels >= 0]
    if clustered.size == 0:
        return p
    counts = np.bincount(clustered)
    largest = int(np.argmax(counts))
    members = pts[labels == largest]
    pad = eps / 2.0 if margin is None else margin
    lo_n = members.min(axis=0) - pad
    hi_n = members.max(axis=0) + pad
    scale = np.asarray(ext.hi) - np.asarray(ext.lo)
    lo = np.maximum(np.asarray(ext.lo) + lo_n * scale, box.lo_arr)
    hi = np.minimum(np.asarray(ext.lo) + hi_n * scale, box.hi_arr)
    # no slabs thinner than the padding
    snap = pad * scale
    if dims is not None:
        # carve only along ``dims``; other sides keep the cell's full range
        keep = np.ones(len(lo), dtype=bool)
        keep[list(dims)] = False
        lo = np.where(keep, box.lo_arr, lo)
        hi = np.where(keep, box.hi_arr, hi)
    lo = np.where(lo - box.lo_arr < snap, box.lo_arr, lo)
    hi = np.where(box.hi_arr - hi < snap, box.hi_arr, hi)
    bbox = Box.from_arrays(lo, hi)
    if volume(bbox) >= volume(box) * (1.0 - rel_tol):
        return p
    return p.replace_box(cell, [bbox, *complement_decompose(box, bbox)])
