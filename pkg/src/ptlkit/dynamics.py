"""Delta-prediction dynamics models and their training loop.

Two model families: a plain ensemble of independently initialized
networks (source training and the scratch/fine-tune baselines), and the
two-column progressive model whose frozen source column feeds lateral
connections into a trainable target column. Both predict the state
*change* in z-scored units; ``predict_next_state`` adds it back onto the
raw state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _kernels, nn
from .errors import ModelDivergedError, RejectedInputError, TrainingDivergedError

WIRING_PTL = "PTL"
WIRING_PNN_OUT = "PNN_OUT"
_WIRING_CODES = {WIRING_PTL: _kernels.WIRING_SAME_LAYER,
                 WIRING_PNN_OUT: _kernels.WIRING_PREV_LAYER}

STD_FLOOR = 1e-8
DEFAULT_ENSEMBLE_SIZE = 3
DEFAULT_EPOCHS = 40
DEFAULT_BATCH_SIZE = 512
ALPHA_INIT_LOW = 0.5
ALPHA_INIT_HIGH = 1.5
_LATERAL_INIT_KEY = 1_000_000


@dataclass
class ModelConfig:
    """Model-section settings of a run config."""

    hidden_width: int = nn.DEFAULT_HIDDEN_WIDTH
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = nn.DEFAULT_LEARNING_RATE
    member_index: int = 0


@dataclass
class Normalizer:
    """Z-score statistics for the (state, action) input and the state delta.

    Std entries are floored at 1e-8; statistics always come from the
    current training dataset only.
    """

    input_mean: np.ndarray
    input_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray

    @classmethod
    def identity(cls, d_in: int, d_out: int) -> "Normalizer":
        return cls(np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    @classmethod
    def fit(cls, states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> "Normalizer":
        x = np.concatenate([states, actions], axis=1)
        delta = next_states - states
        return cls(
            input_mean=x.mean(axis=0),
            input_std=np.maximum(x.std(axis=0), STD_FLOOR),
            delta_mean=delta.mean(axis=0),
            delta_std=np.maximum(delta.std(axis=0), STD_FLOOR),
        )

    def norm_input(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.concatenate([states, actions], axis=1)
        return np.ascontiguousarray((x - self.input_mean) / self.input_std)

    def norm_delta(self, delta: np.ndarray) -> np.ndarray:
        return (delta - self.delta_mean) / self.delta_std

    def denorm_delta(self, normed: np.ndarray) -> np.ndarray:
        return normed * self.delta_std + self.delta_mean

    def copy(self) -> "Normalizer":
        return Normalizer(self.input_mean.copy(), self.input_std.copy(),
                          self.delta_mean.copy(), self.delta_std.copy())

    def to_dict(self) -> dict:
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "delta_mean": self.delta_mean.tolist(),
            "delta_std": self.delta_std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(*(np.asarray(data[k], dtype=np.float64)
                     for k in ("input_mean", "input_std", "delta_mean", "delta_std")))


@dataclass
class DynamicsEnsemble:
    """Independently initialized delta networks sharing one normalizer."""

    members: list[nn.MlpParams]
    normalizer: Normalizer

    @property
    def d_state(self) -> int:
        return self.members[0].d_out

    @property
    def d_action(self) -> int:
        return self.members[0].d_in - self.members[0].d_out

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "members": [m.to_dict() for m in self.members],
            "normalizer": self.normalizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DynamicsEnsemble":
        return cls(
            members=[nn.MlpParams.from_dict(m) for m in data["members"]],
            normalizer=Normalizer.from_dict(data["normalizer"]),
        )


@dataclass
class ProgressiveModel:
    """Frozen source column plus trainable target column and laterals.

    ``wiring_mode`` "PTL": target layer k receives ``W_lc^k relu(alpha^k
    h_source^k)`` inside its ReLU. "PNN_OUT": target layer k receives
    ``U^k h_source^{k-1}`` inside its ReLU (original wiring; the scale
    factors are unused there and keep zero gradients).
    """

    source_column: nn.MlpParams
    target_column: nn.MlpParams
    lateral_weights: list[np.ndarray]
    lateral_scales: np.ndarray
    wiring_mode: str
    normalizer: Normalizer
    train_laterals: bool = True

    @property
    def d_state(self) -> int:
        return self.target_column.d_out

    @property
    def d_action(self) -> int:
        return self.target_column.d_in - self.target_column.d_out

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "wiring_mode": self.wiring_mode,
            "source_column": self.source_column.to_dict(),
            "target_column": self.target_column.to_dict(),
            "lateral_weights": [w.reshape(-1).tolist() for w in self.lateral_weights],
            "lateral_scales": self.lateral_scales.tolist(),
            "normalizer": self.normalizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProgressiveModel":
        source = nn.MlpParams.from_dict(data["source_column"])
        target = nn.MlpParams.from_dict(data["target_column"])
        shapes = lateral_shapes(source.layer_dims, target.layer_dims, data["wiring_mode"])
        laterals = [
            np.asarray(data["lateral_weights"][k], dtype=np.float64).reshape(shapes[k])
            for k in range(2)
        ]
        return cls(
            source_column=source,
            target_column=target,
            lateral_weights=laterals,
            lateral_scales=np.asarray(data["lateral_scales"], dtype=np.float64),
            wiring_mode=data["wiring_mode"],
            normalizer=Normalizer.from_dict(data["normalizer"]),
        )


def lateral_shapes(source_dims, target_dims, wiring_mode: str) -> list[tuple[int, int]]:
    """Lateral weight shapes for layer k in {1, 2}."""
    if wiring_mode == WIRING_PTL:
        return [(target_dims[1], source_dims[1]), (target_dims[2], source_dims[2])]
    if wiring_mode == WIRING_PNN_OUT:
        return [(target_dims[1], source_dims[0]), (target_dims[2], source_dims[1])]
    raise RejectedInputError(f"unknown wiring_mode {wiring_mode!r}")


def init_ensemble(layer_dims, count: int, rng: nn.RngStream) -> DynamicsEnsemble:
    """Fresh ensemble; member i draws from the init stream keyed by i."""
    if count < 1:
        raise RejectedInputError(f"ensemble needs at least 1 member, got {count}")
    members = [nn.init_mlp(layer_dims, rng.generator(i)) for i in range(count)]
    d_in, d_out = members[0].d_in, members[0].d_out
    return DynamicsEnsemble(members=members, normalizer=Normalizer.identity(d_in, d_out))


def init_progressive_from_source(
    source: DynamicsEnsemble,
    member_index: int,
    wiring_mode: str,
    rng: nn.RngStream,
) -> ProgressiveModel:
    """Copy one trained member into the frozen column; init the rest fresh.

    The target column draws from the same init substream a fresh
    ensemble's member 0 would use; laterals draw from their own
    substream so adding them never shifts the column init.
    """
    if not 0 <= member_index < len(source.members):
        raise RejectedInputError(
            f"member_index {member_index} out of range for {len(source.members)} members"
        )
    frozen = source.members[member_index].copy()
    dims = tuple(frozen.layer_dims)
    target = nn.init_mlp(dims, rng.generator(0))
    lat_gen = rng.generator(_LATERAL_INIT_KEY)
    shapes = lateral_shapes(dims, dims, wiring_mode)
    laterals = [nn.glorot_uniform(s[0], s[1], lat_gen) for s in shapes]
    scales = lat_gen.uniform(ALPHA_INIT_LOW, ALPHA_INIT_HIGH, size=2)
    return ProgressiveModel(
        source_column=frozen,
        target_column=target,
        lateral_weights=laterals,
        lateral_scales=scales,
        wiring_mode=wiring_mode,
        normalizer=source.normalizer.copy(),
    )


def zero_and_freeze_laterals(pm: ProgressiveModel) -> None:
    """Diagnostic helper: kill the lateral path and stop training it.

    With the laterals zeroed and frozen the progressive model computes
    exactly the plain target-column network.
    """
    for w in pm.lateral_weights:
        w[:] = 0.0
    pm.lateral_scales[:] = 0.0
    pm.train_laterals = False


def _net_forward_progressive(pm: ProgressiveModel, x_norm: np.ndarray) -> np.ndarray:
    s, t = pm.source_column, pm.target_column
    return _kernels.progressive_forward_batch(
        s.weights[0], s.biases[0], s.weights[1], s.biases[1],
        t.weights[0], t.biases[0], t.weights[1], t.biases[1], t.weights[2], t.biases[2],
        pm.lateral_weights[0], pm.lateral_weights[1],
        float(pm.lateral_scales[0]), float(pm.lateral_scales[1]),
        _WIRING_CODES[pm.wiring_mode], x_norm,
    )


def _net_forward_member(params: nn.MlpParams, x_norm: np.ndarray) -> np.ndarray:
    return _kernels.mlp_forward_batch(
        params.weights[0], params.biases[0],
        params.weights[1], params.biases[1],
        params.weights[2], params.biases[2],
        x_norm,
    )


def _as_sa_batch(model, state, action):
    d_s, d_a = model.d_state, model.d_action
    s = np.asarray(state, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    single = s.ndim == 1
    if single:
        s, a = s[None, :], a[None, :]
    if s.shape[1] != d_s or a.shape[1] != d_a or s.shape[0] != a.shape[0]:
        raise RejectedInputError(
            f"expected state ({d_s},) and action ({d_a},) batches, "
            f"got {s.shape} and {a.shape}"
        )
    return s, a, single


def progressive_forward(pm: ProgressiveModel, state, action) -> np.ndarray:
    """Predicted raw state delta for one (state, action) pair or a batch."""
    s, a, single = _as_sa_batch(pm, state, action)
    x = pm.normalizer.norm_input(s, a)
    out = pm.normalizer.denorm_delta(_net_forward_progressive(pm, x))
    return out[0] if single else out


def predict_next_state(model, state, action):
    """State plus predicted delta; ensembles return one array per member.

    Any object exposing ``next_state_batch(states, actions)`` (e.g. the
    ground-truth oracle) is passed through directly.
    """
    if hasattr(model, "next_state_batch"):
        s = np.asarray(state, dtype=np.float64)
        single = s.ndim == 1
        nxt = model.next_state_batch(
            s[None, :] if single else s,
            np.asarray(action, dtype=np.float64)[None, :] if single else np.asarray(action),
        )
        return nxt[0] if single else nxt
    s, a, single = _as_sa_batch(model, state, action)
    x = model.normalizer.norm_input(s, a)
    if isinstance(model, ProgressiveModel):
        nxt = s + model.normalizer.denorm_delta(_net_forward_progressive(model, x))
        if not np.isfinite(nxt).all():
            raise ModelDivergedError("non-finite next-state prediction")
        return nxt[0] if single else nxt
    outs = []
    for member in model.members:
        nxt = s + model.normalizer.denorm_delta(_net_forward_member(member, x))
        if not np.isfinite(nxt).all():
            raise ModelDivergedError("non-finite next-state prediction")
        outs.append(nxt[0] if single else nxt)
    return outs


def transitions_to_arrays(transitions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coerce (s, a, s') triples or (s, a, r, s') quadruples to arrays."""
    if isinstance(transitions, tuple) and len(transitions) == 3:
        s, a, s2 = (np.asarray(v, dtype=np.float64) for v in transitions)
        return s, a, s2
    if len(transitions) == 0:
        raise RejectedInputError("empty transition dataset")
    rows = list(transitions)
    s = np.asarray([r[0] for r in rows], dtype=np.float64)
    a = np.asarray([r[1] for r in rows], dtype=np.float64)
    s2 = np.asarray([r[-1] for r in rows], dtype=np.float64)
    return s, a, s2


def _mse_loss_grads_mlp(params: nn.MlpParams, x, y):
    b = x.shape[0]
    z1 = x @ params.weights[0].T + params.biases[0]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.weights[1].T + params.biases[1]
    h2 = np.maximum(z2, 0.0)
    out = h2 @ params.weights[2].T + params.biases[2]
    diff = out - y
    loss = 0.5 * float((diff * diff).sum()) / b
    d3 = diff / b
    gw3 = d3.T @ h2
    gb3 = d3.sum(axis=0)
    d2 = (d3 @ params.weights[2]) * (z2 > 0.0)
    gw2 = d2.T @ h1
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ params.weights[1]) * (z1 > 0.0)
    gw1 = d1.T @ x
    gb1 = d1.sum(axis=0)
    return loss, nn.MlpGrads([gw1, gw2, gw3], [gb1, gb2, gb3])


def _mse_loss_grads_progressive(pm: ProgressiveModel, x, y):
    """Loss plus gradients for the target column, laterals, and scales."""
    b = x.shape[0]
    s, t = pm.source_column, pm.target_column
    l1, l2 = pm.lateral_weights
    ptl = pm.wiring_mode == WIRING_PTL

    hs1 = np.maximum(x @ s.weights[0].T + s.biases[0], 0.0)
    hs2 = np.maximum(hs1 @ s.weights[1].T + s.biases[1], 0.0)
    if ptl:
        p1 = pm.lateral_scales[0] * hs1
        p2 = pm.lateral_scales[1] * hs2
        g1 = np.maximum(p1, 0.0)
        g2 = np.maximum(p2, 0.0)
    else:
        g1, g2 = x, hs1
    z1 = x @ t.weights[0].T + t.biases[0] + g1 @ l1.T
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ t.weights[1].T + t.biases[1] + g2 @ l2.T
    h2 = np.maximum(z2, 0.0)
    out = h2 @ t.weights[2].T + t.biases[2]

    diff = out - y
    loss = 0.5 * float((diff * diff).sum()) / b
    d3 = diff / b
    gw3 = d3.T @ h2
    gb3 = d3.sum(axis=0)
    d2 = (d3 @ t.weights[2]) * (z2 > 0.0)
    gw2 = d2.T @ h1
    gb2 = d2.sum(axis=0)
    gl2 = d2.T @ g2
    d1 = (d2 @ t.weights[1]) * (z1 > 0.0)
    gw1 = d1.T @ x
    gb1 = d1.sum(axis=0)
    gl1 = d1.T @ g1

    galpha = np.zeros(2)
    if ptl:
        dg1 = (d1 @ l1) * (p1 > 0.0)
        dg2 = (d2 @ l2) * (p2 > 0.0)
        galpha[0] = float((dg1 * hs1).sum())
        galpha[1] = float((dg2 * hs2).sum())
    grads = nn.MlpGrads([gw1, gw2, gw3], [gb1, gb2, gb3])
    return loss, grads, [gl1, gl2], galpha


class _ArrayAdam:
    """Adam over a flat list of arrays (laterals and scales)."""

    def __init__(self, arrays):
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads, lr):
        self.t += 1
        c1 = 1.0 - nn.ADAM_BETA1 ** self.t
        c2 = 1.0 - nn.ADAM_BETA2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m[...] = nn.ADAM_BETA1 * m + (1.0 - nn.ADAM_BETA1) * g
            v[...] = nn.ADAM_BETA2 * v + (1.0 - nn.ADAM_BETA2) * g * g
            a[...] = a - lr * (m / c1) / (np.sqrt(v / c2) + nn.ADAM_EPS)


def _train_single(step_fn, n: int, epochs: int, batch_size: int, gen) -> list[float]:
    history = []
    for _ in range(epochs):
        perm = gen.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            loss = step_fn(idx)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss {loss}")
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train_dynamics(
    model,
    dataset,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH_SIZE,
    rng: nn.RngStream | None = None,
    lr: float = nn.DEFAULT_LEARNING_RATE,
) -> list[float]:
    """Minibatch Adam on the mean-squared delta loss; refits the normalizer.

    Returns per-epoch losses in normalized units (averaged across
    ensemble members). The progressive model's source column is never
    touched; its laterals and scales train unless frozen.
    """
    states, actions, next_states = transitions_to_arrays(dataset)
    n = states.shape[0]
    if n == 0:
        raise RejectedInputError("empty transition dataset")
    if rng is None:
        rng = nn.RngStream(seed=0, stream_id=nn.TRAIN_STREAM)
    model.normalizer = Normalizer.fit(states, actions, next_states)
    x_all = model.normalizer.norm_input(states, actions)
    y_all = model.normalizer.norm_delta(next_states - states)

    if isinstance(model, ProgressiveModel):
        opt = nn.OptimizerState.initial(model.target_column)
        lat_opt = _ArrayAdam([*model.lateral_weights, model.lateral_scales])
        state = {"params": model.target_column, "opt": opt}

        def step(idx):
            x, y = x_all[idx], y_all[idx]
            loss, grads, glat, galpha = _mse_loss_grads_progressive(model, x, y)
            state["params"], state["opt"] = nn.adam_step(state["params"], grads, state["opt"], lr)
            model.target_column = state["params"]
            if model.train_laterals:
                lat_opt.step([*model.lateral_weights, model.lateral_scales],
                             [*glat, galpha], lr)
            return loss

        return _train_single(step, n, epochs, batch_size, rng.generator(0))

    histories = []
    for i, member in enumerate(model.members):
        opt = nn.OptimizerState.initial(member)
        state = {"params": member, "opt": opt}

        def step(idx, state=state):
            x, y = x_all[idx], y_all[idx]
            loss, grads = _mse_loss_grads_mlp(state["params"], x, y)
            state["params"], state["opt"] = nn.adam_step(state["params"], grads, state["opt"], lr)
            return loss

        histories.append(_train_single(step, n, epochs, batch_size, rng.generator(i)))
        model.members[i] = state["params"]
    return [float(np.mean(col)) for col in zip(*histories)]


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f)


def load_model(path):
    """Load an ensemble or progressive checkpoint, sniffing by keys."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if "wiring_mode" in data:
        return ProgressiveModel.from_dict(data)
    if "members" in data:
        return DynamicsEnsemble.from_dict(data)
    raise RejectedInputError(f"unrecognized model checkpoint at {path}")
