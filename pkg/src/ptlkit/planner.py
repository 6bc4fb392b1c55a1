"""Online MPC action selection over a learned or true dynamics model.

Candidate action sequences come from time-correlated (filtered) noise
around a running mean; each candidate is rolled out under the model and
the mean is refined as an exponentially reward-weighted average of the
candidates. The first action of the refined mean is executed and the
mean is shifted one step for the next call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, envs
from .errors import ModelDivergedError, PlanningFailedError, RejectedInputError


@dataclass
class PlannerConfig:
    """MPC hyperparameters (candidate count 700 at paper scale, 200 here)."""

    horizon: int = 7
    candidates: int = 200
    filter_beta: float = 0.7
    reward_temperature: float = 1.0
    noise_sigma: float = 0.3
    refinement_iters: int = 1

    def validate(self) -> None:
        if self.horizon < 1 or self.candidates < 1 or self.refinement_iters < 1:
            raise RejectedInputError("horizon, candidates and refinement_iters must be >= 1")
        if not 0.0 < self.filter_beta <= 1.0:
            raise RejectedInputError(f"filter_beta must be in (0, 1], got {self.filter_beta}")
        if self.reward_temperature <= 0 or self.noise_sigma < 0:
            raise RejectedInputError("reward_temperature must be > 0 and noise_sigma >= 0")


@dataclass
class PlanState:
    """Warm-start state carried between consecutive control steps."""

    mean: np.ndarray        # (H, d_a) running action mean
    prev_noise: np.ndarray  # (N, d_a) last filtered noise per candidate

    @classmethod
    def initial(cls, cfg: PlannerConfig, d_action: int) -> "PlanState":
        return cls(mean=np.zeros((cfg.horizon, d_action)),
                   prev_noise=np.zeros((cfg.candidates, d_action)))


def _next_state_fns(model):
    """Per-member batched next-state callables, reduced in member order."""
    if hasattr(model, "next_state_batch"):
        return [model.next_state_batch]
    if isinstance(model, dynamics.ProgressiveModel):
        def fn(states, actions, model=model):
            x = model.normalizer.norm_input(states, actions)
            return states + model.normalizer.denorm_delta(
                dynamics._net_forward_progressive(model, x))
        return [fn]
    if isinstance(model, dynamics.DynamicsEnsemble):
        fns = []
        for member in model.members:
            def fn(states, actions, member=member, model=model):
                x = model.normalizer.norm_input(states, actions)
                return states + model.normalizer.denorm_delta(
                    dynamics._net_forward_member(member, x))
            fns.append(fn)
        return fns
    raise RejectedInputError(f"unsupported model type {type(model).__name__}")


def rollout_model(model, state: np.ndarray, action_sequence: np.ndarray, reward_fn,
                  start_step: int = 0):
    """Roll one action sequence forward and sum rewards over its steps.

    For ensembles the cumulative reward is averaged across members and
    the predicted states are returned per member, stacked first.
    """
    actions = np.asarray(action_sequence, dtype=np.float64)
    if actions.ndim != 2:
        actions = actions.reshape(len(actions), -1)
    fns = _next_state_fns(model)
    horizon = actions.shape[0]
    all_states, total = [], 0.0
    for fn in fns:
        current = np.asarray(state, dtype=np.float64)[None, :]
        member_states = np.empty((horizon, current.shape[1]))
        member_total = 0.0
        for t in range(horizon):
            current = fn(current, actions[t][None, :])
            if not np.isfinite(current).all():
                raise ModelDivergedError("non-finite prediction during rollout")
            member_states[t] = current[0]
            member_total += float(reward_fn(current, actions[t][None, :],
                                            start_step + t + 1)[0])
        all_states.append(member_states)
        total += member_total
    total /= len(fns)
    states = all_states[0] if len(fns) == 1 else np.stack(all_states)
    return states, total


def _candidate_rewards(fns, state, candidate_actions, reward_fn, start_step):
    n, horizon, _ = candidate_actions.shape
    totals = np.zeros(n)
    for fn in fns:
        current = np.repeat(state[None, :], n, axis=0)
        for t in range(horizon):
            current = fn(current, candidate_actions[:, t, :])
            r = reward_fn(current, candidate_actions[:, t, :], start_step + t + 1)
            totals += np.where(np.isfinite(r), r, -np.inf)
            if not np.isfinite(current).all():
                # freeze diverged rows: their rewards are already -inf
                current = np.where(np.isfinite(current), current, 0.0)
    return totals / len(fns)


def plan_action(
    model,
    reward_fn,
    state: np.ndarray,
    plan_state: PlanState,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> tuple[np.ndarray, PlanState]:
    """One MPC decision: returns the action to execute and the shifted warm start.

    ``reward_fn(next_states, actions, arrival_step)`` must be batched;
    ``step`` is the absolute step of ``state`` in the target schedule.
    """
    cfg.validate()
    state = np.asarray(state, dtype=np.float64)
    fns = _next_state_fns(model)
    d_a = plan_state.mean.shape[1]
    mean = plan_state.mean
    noise = plan_state.prev_noise
    first_noise = noise

    for _ in range(cfg.refinement_iters):
        white = rng.normal(0.0, cfg.noise_sigma, size=(cfg.candidates, cfg.horizon, d_a))
        filtered = np.empty_like(white)
        prev = plan_state.prev_noise
        for t in range(cfg.horizon):
            prev = cfg.filter_beta * white[:, t, :] + (1.0 - cfg.filter_beta) * prev
            filtered[:, t, :] = prev
        candidates = np.clip(mean[None, :, :] + filtered, -1.0, 1.0)
        rewards = _candidate_rewards(fns, state, candidates, reward_fn, step)
        best = rewards.max()
        if not np.isfinite(best):
            raise PlanningFailedError("all candidate rewards are non-finite")
        weights = np.exp(cfg.reward_temperature * (rewards - best))
        weights /= weights.sum()
        mean = np.einsum("n,nhd->hd", weights, candidates)
        first_noise = filtered[:, 0, :]

    action = mean[0].copy()
    shifted = np.vstack([mean[1:], mean[-1:]])
    return action, PlanState(mean=shifted, prev_noise=first_noise)
