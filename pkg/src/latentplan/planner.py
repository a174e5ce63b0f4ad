"""Random Mutation Hill Climbing over action sequences with shift buffering.

Plans are ``(H, 3)`` arrays of ``(steer, accel, brake)`` rows. Fitness is the
undiscounted sum of predicted rewards up to the first step whose predicted
terminal probability exceeds a threshold.

Forward models used for planning follow a small duck-typed protocol, see
:class:`ForwardModel`. All model calls are batched over a leading lane
dimension so that many independent agents can plan in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from latentplan.env import ACTION_DIM, ACTION_HIGH, ACTION_LOW

ACTION_RANGE = ACTION_HIGH - ACTION_LOW


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 20
    generations: int = 10
    p_mut: float = 0.3
    sigma_mut: float = 0.3
    terminal_threshold: float = 0.5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.generations < 1:
            raise ValueError(f"generations must be >= 1, got {self.generations}")
        if not 0.0 < self.p_mut <= 1.0:
            raise ValueError(f"p_mut must lie in (0, 1], got {self.p_mut}")
        if self.sigma_mut <= 0:
            raise ValueError(f"sigma_mut must be > 0, got {self.sigma_mut}")


@dataclass
class PlanEvaluation:
    fitness: float
    rewards: np.ndarray
    cutoff: int


class ForwardModel:
    """Protocol for anything the planner can imagine trajectories with.

    ``z`` and ``state`` are batched over lanes. ``imagine`` returns predicted
    rewards and terminal probabilities, both shaped ``(lanes, H)``.
    """

    def encode(self, obs):
        return np.asarray(obs)

    def initial_state(self, lanes: int):
        return None

    def advance(self, z, actions: np.ndarray, state):
        return state

    def imagine(self, z, state, plans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def lane(self, z, state):
        """Lift a single-lane ``(z, state)`` to a batch of one."""
        return np.asarray(z)[None], state

    def take(self, state, idx: np.ndarray):
        return state

    def put(self, state, idx: np.ndarray, sub):
        return state


def random_action(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(ACTION_LOW, ACTION_HIGH)


def random_plan(horizon: int, rng: np.random.Generator) -> np.ndarray:
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    return rng.uniform(ACTION_LOW, ACTION_HIGH, size=(horizon, ACTION_DIM))


def mutate(plan: np.ndarray, rng: np.random.Generator, p_mut: float, sigma_mut: float) -> np.ndarray:
    """Gaussian perturbation of each component with probability ``p_mut``.

    Noise is scaled by the component range and the result is clamped to the
    action bounds. At least one component is always perturbed.
    """
    mask = rng.random(plan.shape) < p_mut
    if not mask.any():
        mask.flat[rng.integers(mask.size)] = True
    noise = rng.normal(size=plan.shape) * sigma_mut * ACTION_RANGE
    return np.clip(plan + mask * noise, ACTION_LOW, ACTION_HIGH)


def shift_buffer(plan: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Drop the executed first action and append a fresh random one."""
    return np.vstack([plan[1:], random_action(rng)[None]])


def score(rewards: np.ndarray, terminal_p: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Fitness and cutoff step per lane from ``(lanes, H)`` predictions."""
    ended = terminal_p > threshold
    horizon = rewards.shape[1]
    cutoff = np.where(ended.any(axis=1), ended.argmax(axis=1), horizon)
    keep = np.arange(horizon)[None, :] < cutoff[:, None]
    return np.sum(rewards * keep, axis=1), cutoff


def evaluate_plans(model, z, state, plans: np.ndarray, threshold: float):
    rewards, terminal_p = model.imagine(z, state, plans)
    rewards = np.asarray(rewards, dtype=np.float64)
    fitness, cutoff = score(rewards, np.asarray(terminal_p), threshold)
    return fitness, cutoff, rewards


def evaluate_plan(model, z0, state0, plan: np.ndarray, threshold: float = 0.5) -> PlanEvaluation:
    z, state = model.lane(z0, state0)
    fitness, cutoff, rewards = evaluate_plans(model, z, state, plan[None], threshold)
    return PlanEvaluation(float(fitness[0]), rewards[0], int(cutoff[0]))


MutateFn = Callable[[np.ndarray, np.random.Generator, float, float], np.ndarray]


def rmhc_lanes(
    model,
    z,
    state,
    plans: np.ndarray,
    rngs: Sequence[np.random.Generator],
    config: PlannerConfig,
    mutate_fn: MutateFn = mutate,
):
    """Run RMHC independently on every lane.

    Returns ``(plans, fitness, cutoff, rewards, trace)`` where ``trace`` has
    shape ``(lanes, generations + 1)`` and holds the incumbent fitness after
    each generation (column 0 is the initial plan).
    """
    thr = config.terminal_threshold
    fitness, cutoff, rewards = evaluate_plans(model, z, state, plans, thr)
    trace = [fitness.copy()]
    for _ in range(config.generations):
        challengers = np.stack(
            [mutate_fn(p, rng, config.p_mut, config.sigma_mut) for p, rng in zip(plans, rngs)]
        )
        c_fit, c_cut, c_rew = evaluate_plans(model, z, state, challengers, thr)
        accept = c_fit >= fitness
        plans = np.where(accept[:, None, None], challengers, plans)
        fitness = np.where(accept, c_fit, fitness)
        cutoff = np.where(accept, c_cut, cutoff)
        rewards = np.where(accept[:, None], c_rew, rewards)
        trace.append(fitness.copy())
    return plans, fitness, cutoff, rewards, np.stack(trace, axis=1)


def rmhc(
    model,
    z0,
    state0,
    config: PlannerConfig,
    rng: np.random.Generator,
    initial: np.ndarray,
    mutate_fn: MutateFn = mutate,
) -> tuple[np.ndarray, PlanEvaluation, np.ndarray]:
    """Single-agent RMHC. Returns the final plan, its evaluation and the fitness trace."""
    z, state = model.lane(z0, state0)
    plans, fitness, cutoff, rewards, trace = rmhc_lanes(
        model, z, state, initial[None], [rng], config, mutate_fn
    )
    return plans[0], PlanEvaluation(float(fitness[0]), rewards[0], int(cutoff[0])), trace[0]


class PlanningAgent:
    """Rolling-horizon planner driving one or more episodes in lockstep.

    Each lane keeps its own real-trajectory recurrent state, buffered plan and
    random stream. Planning always branches from the real state.
    """

    def __init__(self, model, config: PlannerConfig, rngs: Sequence[np.random.Generator]):
        self.model = model
        self.config = config
        self.rngs = list(rngs)
        self.state = None
        self.plans: np.ndarray | None = None
        self.last_plans: np.ndarray | None = None
        self._ready = False

    @property
    def lanes(self) -> int:
        return len(self.rngs)

    def reset(self) -> None:
        self.state = self.model.initial_state(self.lanes)
        self.plans = None
        self.last_plans = None
        self._ready = True

    def act(self, obs, lanes: np.ndarray | None = None) -> np.ndarray:
        """Plan for the given lanes (default: all) and return their first actions."""
        if not self._ready:
            raise RuntimeError("PlanningAgent.reset must be called before act")
        if self.plans is None:
            self.plans = np.stack([random_plan(self.config.horizon, r) for r in self.rngs])
            self.last_plans = self.plans.copy()
        idx = np.arange(self.lanes) if lanes is None else np.asarray(lanes)
        rngs = [self.rngs[i] for i in idx]
        z = self.model.encode(obs)
        state = self.model.take(self.state, idx)
        plans, *_ = rmhc_lanes(self.model, z, state, self.plans[idx], rngs, self.config)
        actions = plans[:, 0].copy()
        self.state = self.model.put(self.state, idx, self.model.advance(z, actions, state))
        self.last_plans[idx] = plans
        self.plans[idx] = np.stack([shift_buffer(p, r) for p, r in zip(plans, rngs)])
        return actions


def planning_policy_step(agent: PlanningAgent, obs) -> np.ndarray:
    """Single-lane convenience wrapper around :meth:`PlanningAgent.act`."""
    return agent.act(np.asarray(obs)[None])[0]
