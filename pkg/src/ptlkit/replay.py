"""Trajectory storage and transfer-sample selection.

Selection scores each source rollout by a priority value combining its
total reward, its mean final score, and how smoothly the agent portion
of the state moved, then draws a fixed ratio of trajectories without
replacement under a median-split probability tilt. Source-origin data
is progressively evicted from the training buffer, lowest priority
first, so target-scene data comes to dominate.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import RejectedInputError

ORIGIN_SOURCE = "source"
ORIGIN_TARGET_RANDOM = "target_random"
ORIGIN_TARGET_ONLINE = "target_online"
_ORIGINS = (ORIGIN_SOURCE, ORIGIN_TARGET_RANDOM, ORIGIN_TARGET_ONLINE)

MEDIAN_TOLERANCE = 1e-12


@dataclass
class SelectionConfig:
    """Knobs of the priority-value selection rule."""

    lambda1: float = 0.4           # reward weight in the priority value
    rho: float = 0.1               # probability tilt around the median
    rho_number: float = 0.1        # fraction of the buffer to select
    final_score_window: int = 5    # steps averaged into the mean final score


@dataclass
class EvictionPolicy:
    """Per-iteration removal of source-origin trajectories."""

    fraction: float = 0.1          # ceil(fraction * remaining source) per call


@dataclass
class Trajectory:
    """One closed-loop rollout of T steps plus provenance."""

    states: np.ndarray             # (T+1, d_s)
    actions: np.ndarray            # (T, d_a)
    rewards: np.ndarray            # (T,)
    scores: np.ndarray             # (T,)
    agent_state_indices: tuple[int, ...]
    origin: str
    iteration_created: int
    seed: int
    id: str
    env_params: dict = field(default_factory=dict)

    def validate(self) -> None:
        t = self.actions.shape[0]
        if t < 1:
            raise RejectedInputError("trajectory must have at least one step")
        if self.states.shape[0] != t + 1:
            raise RejectedInputError(
                f"states length {self.states.shape[0]} != actions length {t} + 1"
            )
        if self.rewards.shape[0] != t or self.scores.shape[0] != t:
            raise RejectedInputError("rewards and scores must have one entry per step")
        d_s = self.states.shape[1]
        if not self.agent_state_indices:
            raise RejectedInputError("agent_state_indices must be non-empty")
        if any(not 0 <= i < d_s for i in self.agent_state_indices):
            raise RejectedInputError(f"agent_state_indices out of range for d_s={d_s}")
        if self.origin not in _ORIGINS:
            raise RejectedInputError(f"unknown origin {self.origin!r}")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def mean_final_score(self, window: int = 5) -> float:
        return float(self.scores[-window:].mean())

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "origin": self.origin,
            "iteration": self.iteration_created,
            "seed": self.seed,
            "env_params": self.env_params,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "scores": self.scores.tolist(),
            "agent_state_indices": list(self.agent_state_indices),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Trajectory":
        traj = cls(
            states=np.asarray(rec["states"], dtype=np.float64),
            actions=np.asarray(rec["actions"], dtype=np.float64),
            rewards=np.asarray(rec["rewards"], dtype=np.float64),
            scores=np.asarray(rec["scores"], dtype=np.float64),
            agent_state_indices=tuple(rec["agent_state_indices"]),
            origin=rec["origin"],
            iteration_created=int(rec["iteration"]),
            seed=int(rec["seed"]),
            id=rec["id"],
            env_params=rec.get("env_params", {}),
        )
        traj.validate()
        return traj


class TrajectoryBuffer:
    """Insertion-ordered trajectory store with optional capacity."""

    def __init__(self, trajectories=None, capacity: int | None = None):
        self.capacity = capacity
        self.trajectories: list[Trajectory] = []
        for traj in trajectories or []:
            self.add(traj)

    def add(self, traj: Trajectory) -> None:
        self.trajectories.append(traj)
        if self.capacity is not None and len(self.trajectories) > self.capacity:
            del self.trajectories[0]

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def of_origin(self, origin: str) -> list[Trajectory]:
        return [t for t in self.trajectories if t.origin == origin]

    def source_count(self) -> int:
        return len(self.of_origin(ORIGIN_SOURCE))


def state_transition_divergence(traj: Trajectory) -> float:
    """Mean squared step-to-step change of the agent-indexed coordinates."""
    traj.validate()
    agent = traj.states[:, list(traj.agent_state_indices)]
    diffs = agent[1:] - agent[:-1]
    return float((diffs * diffs).sum(axis=1).mean())


def priority_value(traj: Trajectory, cfg: SelectionConfig) -> float:
    """(lambda1 * total reward + (1 - lambda1) * mean final score) * e^-StateTD."""
    base = (cfg.lambda1 * traj.total_reward
            + (1.0 - cfg.lambda1) * traj.mean_final_score(cfg.final_score_window))
    return base * math.exp(-state_transition_divergence(traj))


def sampling_probabilities(pvs, rho: float) -> np.ndarray:
    """Median-split probability tilt, normalized to sum exactly to 1."""
    pvs = np.asarray(pvs, dtype=np.float64)
    if pvs.size == 0:
        raise RejectedInputError("empty priority-value list")
    if not 0.0 <= rho <= 1.0:
        raise RejectedInputError(f"rho must be in [0, 1], got {rho}")
    n = pvs.size
    med = float(np.median(pvs))
    raw = np.full(n, 1.0 / n)
    above = pvs > med + MEDIAN_TOLERANCE
    below = pvs < med - MEDIAN_TOLERANCE
    raw[above] *= 1.0 + rho
    raw[below] *= 1.0 - rho
    return raw / raw.sum()


def select_transfer_samples(
    buffer: TrajectoryBuffer,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> list[Trajectory]:
    """Draw ceil(rho_number * N) distinct trajectories by priority.

    Sequential weighted draws without replacement: after each draw the
    remaining probabilities are renormalized.
    """
    n = len(buffer)
    if n == 0:
        raise RejectedInputError("cannot select from an empty buffer")
    pvs = [priority_value(t, cfg) for t in buffer]
    probs = sampling_probabilities(pvs, cfg.rho)
    n_select = math.ceil(cfg.rho_number * n)
    remaining = list(range(n))
    weights = probs.copy()
    chosen: list[int] = []
    for _ in range(n_select):
        w = weights[remaining]
        pick = rng.choice(len(remaining), p=w / w.sum())
        chosen.append(remaining.pop(int(pick)))
    return [buffer.trajectories[i] for i in chosen]


def to_transitions(trajectories) -> list[tuple[np.ndarray, np.ndarray, float, np.ndarray]]:
    """Order-preserving (s, a, r, s') quadruples, T per trajectory."""
    quads = []
    for traj in trajectories:
        for t in range(traj.length):
            quads.append((traj.states[t], traj.actions[t],
                          float(traj.rewards[t]), traj.states[t + 1]))
    return quads


def evict_outdated(
    buffer: TrajectoryBuffer,
    iteration: int,
    policy: EvictionPolicy,
    cfg: SelectionConfig | None = None,
) -> list[Trajectory]:
    """Drop the lowest-priority source-origin trajectories in place.

    Removes ceil(fraction * remaining source count) per call; target
    data is never touched. Returns the evicted trajectories so callers
    can tombstone their store records.
    """
    cfg = cfg or SelectionConfig()
    source = [(i, t) for i, t in enumerate(buffer.trajectories) if t.origin == ORIGIN_SOURCE]
    if not source:
        return []
    n_evict = math.ceil(policy.fraction * len(source))
    ranked = sorted(source, key=lambda pair: (priority_value(pair[1], cfg), pair[0]))
    doomed = ranked[:n_evict]
    doomed_ids = {i for i, _ in doomed}
    buffer.trajectories = [t for i, t in enumerate(buffer.trajectories) if i not in doomed_ids]
    return [t for _, t in doomed]


class TrajectoryStore:
    """Append-only JSON-lines trajectory file with logical eviction.

    Evicted trajectory ids go to a sidecar file (``<path>.tombstones``),
    one id per line; ``load`` skips tombstoned records.
    """

    def __init__(self, path):
        self.path = os.fspath(path)

    @property
    def tombstone_path(self) -> str:
        return self.path + ".tombstones"

    def append(self, traj: Trajectory) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(traj.to_record()) + "\n")

    def tombstone(self, ids) -> None:
        with open(self.tombstone_path, "a", encoding="utf-8") as f:
            for traj_id in ids:
                f.write(str(traj_id) + "\n")

    def tombstoned_ids(self) -> set[str]:
        if not os.path.exists(self.tombstone_path):
            return set()
        with open(self.tombstone_path, "r", encoding="utf-8") as f:
            return {line.strip() for line in f if line.strip()}

    def load(self, include_tombstoned: bool = False) -> list[Trajectory]:
        if not os.path.exists(self.path):
            raise RejectedInputError(f"no trajectory store at {self.path}")
        dead = set() if include_tombstoned else self.tombstoned_ids()
        out = []
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["id"] in dead:
                    continue
                out.append(Trajectory.from_record(rec))
        return out
