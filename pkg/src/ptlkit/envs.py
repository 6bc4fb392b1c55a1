"""Analytic surrogate manipulation environments.

Two deterministic tasks whose object-size parameters define the
source -> target transfer pair:

* ``orbit2`` — two discs on a palm, each driven by a radial and a
  tangential force actuator, sliding in a circular valley with
  disc-disc elastic contact. The goal is to track two targets rotating
  around the palm at constant angular rate; a disc whose center leaves
  the palm counts as dropped.
* ``spinner`` — a single rigid rotor driven by two torque actuators
  toward a fixed goal angle; exceeding the spin limit counts as dropped
  (the surrogate analog of the wrist-limit penalty).

State layout puts the actuator coordinates first; they are the "agent"
portion used by the trajectory-smoothness measure. All updates are
semi-implicit Euler and pure functions of (state, action, params).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError, SimulationDivergedError

ORBIT2 = "orbit2"
SPINNER = "spinner"

ORBIT2_DROP_PENALTY = 500.0
ORBIT2_DISTANCE_WEIGHT = 5.0
SPINNER_DROP_PENALTY = 100.0
SPINNER_DISTANCE_WEIGHT = 7.0


@dataclass
class EnvParams:
    """Physical parameters of one surrogate scene.

    ``object_radii`` and ``masses`` (orbit2) or ``inertia`` (spinner)
    are the quantities whose change defines the source vs. target task.
    """

    env_kind: str = ORBIT2
    object_radii: tuple[float, ...] = (0.025, 0.025)
    masses: tuple[float, ...] = (0.10, 0.10)
    inertia: float = 5e-4
    palm_radius: float = 0.1
    dt: float = 0.1                 # one action per 0.1 s
    actuator_count: int = 4
    actuator_rate: float = 5.0      # first-order actuator lag, 1/s
    force_gain: float = 0.02        # N at full actuator deflection (orbit2)
    bowl_gain: float = 3.0          # valley stiffness toward the orbit radius, 1/s^2
    drag: float = 1.0               # linear velocity damping, 1/s
    restitution: float = 0.9
    target_rate: float = 0.4        # target angular speed, rad/s (orbit2)
    target_orbit_radius: float = 0.05
    torque_gain: float = 2e-3       # N*m at full deflection (spinner)
    spin_limit: float = 4.0         # rad/s; beyond it the spinner "drops"
    target_angle: float = 0.5       # goal pose, rad (spinner)
    reset_jitter: float = 0.01      # fraction of palm_radius (orbit2) / rad (spinner)

    def validate(self) -> None:
        if self.env_kind not in (ORBIT2, SPINNER):
            raise RejectedInputError(f"unknown env_kind {self.env_kind!r}")
        if not 0.0 < self.dt <= 0.1:
            raise RejectedInputError(f"dt must be in (0, 0.1], got {self.dt}")
        positive = {
            "palm_radius": self.palm_radius, "actuator_rate": self.actuator_rate,
            "force_gain": self.force_gain, "restitution": self.restitution,
            "target_orbit_radius": self.target_orbit_radius,
            "torque_gain": self.torque_gain, "spin_limit": self.spin_limit,
            "inertia": self.inertia,
        }
        for name, value in positive.items():
            if value <= 0:
                raise RejectedInputError(f"{name} must be positive, got {value}")
        if self.drag < 0 or self.bowl_gain < 0 or self.reset_jitter < 0:
            raise RejectedInputError("drag, bowl_gain and reset_jitter must be >= 0")
        if self.env_kind == ORBIT2:
            if self.actuator_count != 4:
                raise RejectedInputError("orbit2 uses exactly 4 actuators")
            if len(self.object_radii) != 2 or len(self.masses) != 2:
                raise RejectedInputError("orbit2 needs two object radii and two masses")
        else:
            if self.actuator_count != 2:
                raise RejectedInputError("spinner uses exactly 2 actuators")
            if len(self.object_radii) < 1:
                raise RejectedInputError("spinner needs a characteristic size")
        for r in self.object_radii:
            if r <= 0:
                raise RejectedInputError(f"object radii must be positive, got {r}")
        for m in self.masses:
            if m <= 0:
                raise RejectedInputError(f"masses must be positive, got {m}")

    def to_dict(self) -> dict:
        return {
            "env_kind": self.env_kind,
            "object_radii": list(self.object_radii),
            "masses": list(self.masses),
            "inertia": self.inertia,
            "palm_radius": self.palm_radius,
            "dt": self.dt,
            "actuator_count": self.actuator_count,
            "actuator_rate": self.actuator_rate,
            "force_gain": self.force_gain,
            "bowl_gain": self.bowl_gain,
            "drag": self.drag,
            "restitution": self.restitution,
            "target_rate": self.target_rate,
            "target_orbit_radius": self.target_orbit_radius,
            "torque_gain": self.torque_gain,
            "spin_limit": self.spin_limit,
            "target_angle": self.target_angle,
            "reset_jitter": self.reset_jitter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnvParams":
        params = cls(**{
            k: (tuple(v) if k in ("object_radii", "masses") else v)
            for k, v in data.items()
        })
        params.validate()
        return params


def default_source_params(env_kind: str = ORBIT2) -> EnvParams:
    if env_kind == ORBIT2:
        return EnvParams(env_kind=ORBIT2)
    return EnvParams(env_kind=SPINNER, actuator_count=2,
                     object_radii=(0.05,), masses=(0.10,), inertia=5e-4)


def default_target_params(env_kind: str = ORBIT2) -> EnvParams:
    if env_kind == ORBIT2:
        return EnvParams(env_kind=ORBIT2, object_radii=(0.015, 0.015),
                         masses=(0.036, 0.036))
    return EnvParams(env_kind=SPINNER, actuator_count=2,
                     object_radii=(0.035,), masses=(0.049,), inertia=1.2e-4)


@dataclass
class EnvState:
    """State vector plus the step counter driving the target schedule."""

    vec: np.ndarray
    step: int = 0


def state_dim(params: EnvParams) -> int:
    return 12 if params.env_kind == ORBIT2 else 4


def action_dim(params: EnvParams) -> int:
    return params.actuator_count


def agent_state_indices(params: EnvParams) -> tuple[int, ...]:
    return tuple(range(params.actuator_count))


def canonical_start(params: EnvParams) -> np.ndarray:
    """Rest state: actuators zero, objects on their step-0 targets."""
    if params.env_kind == ORBIT2:
        vec = np.zeros(12)
        targets = target_positions(params, 0)
        vec[4:6] = targets[0]
        vec[8:10] = targets[1]
        return vec
    return np.zeros(4)


def env_reset(params: EnvParams, rng: np.random.Generator) -> EnvState:
    """Canonical start with small seeded jitter on the object placement."""
    params.validate()
    vec = canonical_start(params)
    if params.env_kind == ORBIT2:
        jitter = params.reset_jitter * params.palm_radius
        vec[4:6] += rng.uniform(-jitter, jitter, size=2)
        vec[8:10] += rng.uniform(-jitter, jitter, size=2)
    else:
        vec[2] += rng.uniform(-params.reset_jitter, params.reset_jitter)
    return EnvState(vec=vec, step=0)


def target_positions(params: EnvParams, step: int) -> np.ndarray:
    """(2, 2) target coordinates at the given step (orbit2 schedule)."""
    angles = np.array([0.0, np.pi]) + params.target_rate * params.dt * step
    return params.target_orbit_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _unit_radial(pos: np.ndarray) -> np.ndarray:
    """pos / |pos| rowwise; the zero vector maps to +x."""
    norms = np.linalg.norm(pos, axis=1, keepdims=True)
    u = np.where(norms > 1e-12, pos / np.maximum(norms, 1e-12),
                 np.array([1.0, 0.0]))
    return u


def step_batch(vecs: np.ndarray, actions: np.ndarray, params: EnvParams) -> np.ndarray:
    """Vectorized state update; rows are independent worlds."""
    vecs = np.asarray(vecs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != state_dim(params):
        raise RejectedInputError(f"state batch must be (n, {state_dim(params)})")
    if actions.shape != (vecs.shape[0], params.actuator_count):
        raise RejectedInputError(
            f"action batch must be ({vecs.shape[0]}, {params.actuator_count})"
        )
    if not np.isfinite(vecs).all():
        raise SimulationDivergedError("non-finite state")
    actions = np.clip(actions, -1.0, 1.0)
    dt = params.dt
    mix = min(1.0, params.actuator_rate * dt)
    act = vecs[:, :params.actuator_count]
    act_next = act + (actions - act) * mix

    out = vecs.copy()
    out[:, :params.actuator_count] = act_next

    if params.env_kind == SPINNER:
        angle, omega = vecs[:, 2], vecs[:, 3]
        torque = params.torque_gain * 0.5 * (act_next[:, 0] + act_next[:, 1])
        omega_next = omega + (torque / params.inertia - params.drag * omega) * dt
        out[:, 2] = angle + omega_next * dt
        out[:, 3] = omega_next
        return out

    pos = [vecs[:, 4:6], vecs[:, 8:10]]
    vel = [vecs[:, 6:8], vecs[:, 10:12]]
    new_pos, new_vel = [], []
    for i in range(2):
        u_r = _unit_radial(pos[i])
        u_t = np.stack([-u_r[:, 1], u_r[:, 0]], axis=1)
        force = params.force_gain * (
            act_next[:, 2 * i, None] * u_r + act_next[:, 2 * i + 1, None] * u_t
        )
        radius = np.linalg.norm(pos[i], axis=1, keepdims=True)
        valley = -params.bowl_gain * (radius - params.target_orbit_radius) * u_r
        acc = force / params.masses[i] + valley - params.drag * vel[i]
        v = vel[i] + acc * dt
        new_vel.append(v)
        new_pos.append(pos[i] + v * dt)

    # disc-disc impulse contact with positional de-penetration
    d = new_pos[1] - new_pos[0]
    dist = np.linalg.norm(d, axis=1)
    touch_dist = params.object_radii[0] + params.object_radii[1]
    hit = dist < touch_dist
    if hit.any():
        n = np.where(dist[:, None] > 1e-12, d / np.maximum(dist[:, None], 1e-12),
                     np.array([1.0, 0.0]))
        im1, im2 = 1.0 / params.masses[0], 1.0 / params.masses[1]
        overlap = np.maximum(touch_dist - dist, 0.0)
        shift = (overlap / (im1 + im2))[:, None] * n * hit[:, None]
        new_pos[0] = new_pos[0] - shift * im1
        new_pos[1] = new_pos[1] + shift * im2
        vn = ((new_vel[1] - new_vel[0]) * n).sum(axis=1)
        approaching = hit & (vn < 0.0)
        j = np.where(approaching, -(1.0 + params.restitution) * vn / (im1 + im2), 0.0)
        new_vel[0] = new_vel[0] - j[:, None] * n * im1
        new_vel[1] = new_vel[1] + j[:, None] * n * im2

    out[:, 4:6] = new_pos[0]
    out[:, 6:8] = new_vel[0]
    out[:, 8:10] = new_pos[1]
    out[:, 10:12] = new_vel[1]
    return out


def dropped_batch(vecs: np.ndarray, params: EnvParams) -> np.ndarray:
    """Boolean drop indicator per row, computable from the state alone."""
    if params.env_kind == SPINNER:
        return np.abs(vecs[:, 3]) > params.spin_limit
    r1 = np.linalg.norm(vecs[:, 4:6], axis=1)
    r2 = np.linalg.norm(vecs[:, 8:10], axis=1)
    return (r1 > params.palm_radius) | (r2 > params.palm_radius)


def reward_score_batch(
    vecs: np.ndarray, params: EnvParams, step: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rewards, scores and drop flags for arrival states at ``step``."""
    vecs = np.asarray(vecs, dtype=np.float64)
    dropped = dropped_batch(vecs, params)
    if params.env_kind == SPINNER:
        dist = np.abs(vecs[:, 2] - params.target_angle)
        score = -dist
        reward = SPINNER_DISTANCE_WEIGHT * score - SPINNER_DROP_PENALTY * dropped
        return reward, score, dropped
    targets = target_positions(params, step)
    diff = np.concatenate([vecs[:, 4:6] - targets[0], vecs[:, 8:10] - targets[1]], axis=1)
    score = -np.linalg.norm(diff, axis=1)
    reward = ORBIT2_DISTANCE_WEIGHT * score - ORBIT2_DROP_PENALTY * dropped
    return reward, score, dropped


def true_dynamics(state: EnvState, action: np.ndarray, params: EnvParams) -> EnvState:
    """Ground-truth state update, identical to env_step without rewards."""
    nxt = step_batch(state.vec[None, :], np.asarray(action, dtype=np.float64)[None, :], params)
    return EnvState(vec=nxt[0], step=state.step + 1)


def env_step(
    state: EnvState, action: np.ndarray, params: EnvParams
) -> tuple[EnvState, float, float, dict]:
    """One control step: next state, reward, score and drop flag."""
    nxt = true_dynamics(state, action, params)
    if not np.isfinite(nxt.vec).all():
        raise SimulationDivergedError("environment state diverged")
    reward, score, dropped = reward_score_batch(nxt.vec[None, :], params, nxt.step)
    return nxt, float(reward[0]), float(score[0]), {"dropped": bool(dropped[0])}


class TrueDynamicsModel:
    """Planner-compatible oracle that steps the true environment."""

    def __init__(self, params: EnvParams):
        params.validate()
        self.params = params

    @property
    def d_state(self) -> int:
        return state_dim(self.params)

    @property
    def d_action(self) -> int:
        return action_dim(self.params)

    def next_state_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return step_batch(states, actions, self.params)


def make_reward_fn(params: EnvParams):
    """Batched reward of arrival states for the planner.

    The returned callable takes (next_states, actions, step) where
    ``step`` is the absolute arrival step indexing the target schedule.
    """
    def reward_fn(next_states, actions, step):
        reward, _, _ = reward_score_batch(next_states, params, step)
        return reward
    return reward_fn
