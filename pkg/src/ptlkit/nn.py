"""From-scratch dense networks: forward, analytic gradients, Adam, RNG streams.

All math is float64 numpy. The architecture is fixed at two ReLU hidden
layers plus a linear output layer; parameter containers are treated as
immutable during evaluation (updates allocate fresh arrays), so models
can be shared across threads while a single owner trains them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import RejectedInputError, TrainingDivergedError

# Component stream ids: one independent random stream per subsystem.
ENV_STREAM = 0
PLANNER_STREAM = 1
INIT_STREAM = 2
SELECTION_STREAM = 3
TRAIN_STREAM = 4

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_HIDDEN_WIDTH = 200


@dataclass(frozen=True)
class RngStream:
    """Seeded, replayable random stream for one component.

    Identical (seed, stream_id, keys, call sequence) always yields
    identical draws. Generators for subkeys are independent, so adding
    draws under one key never shifts another key's sequence.
    """

    seed: int
    stream_id: int

    def generator(self, *keys: int) -> np.random.Generator:
        if any(k < 0 for k in keys):
            raise RejectedInputError(f"rng keys must be non-negative, got {keys}")
        return np.random.default_rng([self.seed, self.stream_id, *keys])


@dataclass
class MlpParams:
    """Weights of one d_in -> n1 -> n2 -> d_out network.

    weights[k] has shape (layer_dims[k+1], layer_dims[k]); biases[k] has
    shape (layer_dims[k+1],).
    """

    layer_dims: tuple[int, int, int, int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def validate(self) -> None:
        dims = tuple(self.layer_dims)
        if len(dims) != 4 or any(d <= 0 for d in dims):
            raise RejectedInputError(f"layer_dims must be 4 positive ints, got {dims}")
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise RejectedInputError("expected exactly 3 weight/bias layers")
        for k in range(3):
            want = (dims[k + 1], dims[k])
            if self.weights[k].shape != want:
                raise RejectedInputError(
                    f"weights[{k}] shape {self.weights[k].shape} != {want}"
                )
            if self.biases[k].shape != (dims[k + 1],):
                raise RejectedInputError(
                    f"biases[{k}] shape {self.biases[k].shape} != ({dims[k + 1]},)"
                )
            if not (np.isfinite(self.weights[k]).all() and np.isfinite(self.biases[k]).all()):
                raise RejectedInputError(f"non-finite entries in layer {k}")

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_dims=tuple(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "layer_dims": [int(d) for d in self.layer_dims],
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpParams":
        dims = tuple(int(d) for d in data["layer_dims"])
        weights = [
            np.asarray(data["weights"][k], dtype=np.float64).reshape(dims[k + 1], dims[k])
            for k in range(3)
        ]
        biases = [np.asarray(data["biases"][k], dtype=np.float64) for k in range(3)]
        params = cls(layer_dims=dims, weights=weights, biases=biases)
        params.validate()
        return params


@dataclass
class MlpGrads:
    """Gradient arrays mirroring MlpParams shapes."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class OptimizerState:
    """Adam moment estimates; shapes mirror the tracked parameters."""

    step_count: int
    first_moment_w: list[np.ndarray]
    first_moment_b: list[np.ndarray]
    second_moment_w: list[np.ndarray]
    second_moment_b: list[np.ndarray]

    @classmethod
    def initial(cls, params: MlpParams) -> "OptimizerState":
        return cls(
            step_count=0,
            first_moment_w=[np.zeros_like(w) for w in params.weights],
            first_moment_b=[np.zeros_like(b) for b in params.biases],
            second_moment_w=[np.zeros_like(w) for w in params.weights],
            second_moment_b=[np.zeros_like(b) for b in params.biases],
        )


def glorot_uniform(n_out: int, n_in: int, gen: np.random.Generator) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (n_in + n_out))
    return gen.uniform(-bound, bound, size=(n_out, n_in))


def init_mlp(layer_dims, gen: np.random.Generator) -> MlpParams:
    """Fresh network: Glorot-uniform weights, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    weights = [glorot_uniform(dims[k + 1], dims[k], gen) for k in range(3)]
    biases = [np.zeros(dims[k + 1]) for k in range(3)]
    params = MlpParams(layer_dims=dims, weights=weights, biases=biases)
    params.validate()
    return params


def _as_batch(x: np.ndarray, d: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise RejectedInputError(f"{what} must have length {d}, got shape {x.shape}")
    return np.ascontiguousarray(x), single


def mlp_forward(params: MlpParams, x: np.ndarray, return_hidden: bool = False):
    """Evaluate the network on one input vector or a (batch, d_in) array.

    With ``return_hidden`` the two post-ReLU hidden activations are
    returned alongside the output (lateral connections need them).
    """
    xb, single = _as_batch(x, params.d_in, "input")
    if return_hidden:
        h1 = np.maximum(xb @ params.weights[0].T + params.biases[0], 0.0)
        h2 = np.maximum(h1 @ params.weights[1].T + params.biases[1], 0.0)
        y = h2 @ params.weights[2].T + params.biases[2]
        if single:
            return y[0], (h1[0], h2[0])
        return y, (h1, h2)
    y = _kernels.mlp_forward_batch(
        params.weights[0], params.biases[0],
        params.weights[1], params.biases[1],
        params.weights[2], params.biases[2],
        xb,
    )
    return y[0] if single else y


def mlp_backward(params: MlpParams, x: np.ndarray, output_grad: np.ndarray) -> MlpGrads:
    """Gradients of sum_b <output_grad_b, f(x_b)> w.r.t. every weight and bias.

    Recomputes the forward activations internally; batched inputs sum
    their per-sample contributions.
    """
    xb, _ = _as_batch(x, params.d_in, "input")
    gb, _ = _as_batch(output_grad, params.d_out, "output_grad")
    if gb.shape[0] != xb.shape[0]:
        raise RejectedInputError(
            f"batch mismatch: {xb.shape[0]} inputs vs {gb.shape[0]} output grads"
        )
    z1 = xb @ params.weights[0].T + params.biases[0]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.weights[1].T + params.biases[1]
    h2 = np.maximum(z2, 0.0)

    d3 = gb
    gw3 = d3.T @ h2
    gb3 = d3.sum(axis=0)
    d2 = (d3 @ params.weights[2]) * (z2 > 0.0)
    gw2 = d2.T @ h1
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ params.weights[1]) * (z1 > 0.0)
    gw1 = d1.T @ xb
    gb1 = d1.sum(axis=0)
    return MlpGrads(weights=[gw1, gw2, gw3], biases=[gb1, gb2, gb3])


def adam_step(
    params: MlpParams,
    grads: MlpGrads,
    opt_state: OptimizerState,
    lr: float = DEFAULT_LEARNING_RATE,
) -> tuple[MlpParams, OptimizerState]:
    """One Adam update with bias correction; returns fresh containers."""
    if lr <= 0:
        raise RejectedInputError(f"lr must be positive, got {lr}")
    for g in (*grads.weights, *grads.biases):
        if not np.isfinite(g).all():
            raise TrainingDivergedError("non-finite gradient in adam_step")
    t = opt_state.step_count + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t

    def update(p, g, m, v):
        m_new = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v_new = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        p_new = p - lr * (m_new / c1) / (np.sqrt(v_new / c2) + ADAM_EPS)
        return p_new, m_new, v_new

    new_w, new_b = [], []
    state = OptimizerState(t, [], [], [], [])
    for k in range(3):
        p, m, v = update(params.weights[k], grads.weights[k],
                         opt_state.first_moment_w[k], opt_state.second_moment_w[k])
        new_w.append(p)
        state.first_moment_w.append(m)
        state.second_moment_w.append(v)
        p, m, v = update(params.biases[k], grads.biases[k],
                         opt_state.first_moment_b[k], opt_state.second_moment_b[k])
        new_b.append(p)
        state.first_moment_b.append(m)
        state.second_moment_b.append(v)
    return MlpParams(tuple(params.layer_dims), new_w, new_b), state


def save_checkpoint(params: MlpParams, path) -> None:
    """Write the JSON checkpoint; float64 values round-trip exactly."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params.to_dict(), f)


def load_checkpoint(path) -> MlpParams:
    with open(path, "r", encoding="utf-8") as f:
        return MlpParams.from_dict(json.load(f))
