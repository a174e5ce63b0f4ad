"""Rollout collection, world-model training and the experiment procedures.

Randomness is derived from a master seed through named streams (see
:func:`derive_rng`) so that every consumer gets an independent, stable
generator regardless of what else ran before it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from latentplan import autodiff as ad
from latentplan.checkpoint import save_checkpoint
from latentplan.config import Config
from latentplan.env import (
    ACTION_HIGH,
    ACTION_LOW,
    EnvConfig,
    TrackEnv,
    transition,
)
from latentplan.planner import ForwardModel, PlannerConfig, PlanningAgent
from latentplan.rollouts import ReplayBuffer, Rollout, write_rollouts
from latentplan.worldmodel import (
    MDRNN,
    VAE,
    ModelDims,
    WorldModel,
    WorldModelState,
    lstm_step,
    mdrnn_heads,
    mdrnn_loss_terms,
    vae_forward_loss,
)

log = logging.getLogger(__name__)

# named random streams
TRACKS, POLICY, INIT, SHUFFLE, PLANNER = range(5)


def derive_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream, index)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


class RandomWalkPolicy:
    """Temporally correlated random actions.

    Each lane starts from a uniform action and then takes Gaussian steps of
    size ``std`` clipped to the action box.
    """

    def __init__(self, rngs: Sequence[np.random.Generator], std: float = 0.2):
        self.rngs = list(rngs)
        self.std = std
        self.actions = np.stack([r.uniform(ACTION_LOW, ACTION_HIGH) for r in self.rngs])

    def act(self, lanes: np.ndarray) -> np.ndarray:
        for i in lanes:
            step = self.std * self.rngs[i].standard_normal(len(ACTION_LOW))
            self.actions[i] = np.clip(self.actions[i] + step, ACTION_LOW, ACTION_HIGH)
        return self.actions[lanes].copy()


class OracleModel(ForwardModel):
    """Ground-truth dynamics behind the planner's forward-model protocol.

    A "latent" is a ``(TrackSpec, CarState)`` pair; terminal probabilities
    are exactly 0 or 1.
    """

    def __init__(self, config: EnvConfig):
        self.config = config

    def encode(self, obs):
        return list(obs)

    def lane(self, z, state):
        return [z], state

    def imagine(self, z, state, plans):
        lanes, horizon, _ = plans.shape
        rewards = np.zeros((lanes, horizon))
        terminal_p = np.zeros((lanes, horizon))
        for b in range(lanes):
            spec, s = z[b]
            for t in range(horizon):
                s, r, done = transition(spec, s, plans[b, t], self.config)
                rewards[b, t] = r
                if done:
                    terminal_p[b, t:] = 1.0
                    break
        return rewards, terminal_p


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


@dataclass
class PlanSnapshot:
    """Incumbent plan chosen at step ``t`` with what it was planned from.

    ``model_state`` is the planner's batched recurrent state before the step
    (``None`` for the oracle); index it with the episode's lane.
    """

    t: int
    car: object
    plan: np.ndarray
    obs: np.ndarray
    model_state: object = None


@dataclass
class Episode:
    rollout: Rollout
    track_seed: int
    positions: np.ndarray
    headings: np.ndarray
    score: float = 0.0
    plans: list = field(default_factory=list)
    lane: int = 0


def run_episodes(
    policy: str,
    track_seeds: Sequence[int],
    steps: int,
    config: Config,
    model: WorldModel | None = None,
    seed: int = 0,
    planner: PlannerConfig | None = None,
    keep_plans: int = 0,
) -> list[Episode]:
    """Run one episode per track seed in lockstep.

    ``policy`` is ``random``, ``plan`` (RMHC on ``model``) or ``oracle``
    (RMHC on ground-truth dynamics). With ``keep_plans=k`` every k-th step's
    incumbent plan is stored along with the real state it was planned from.
    """
    if policy not in ("random", "plan", "oracle"):
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "plan" and model is None:
        raise ValueError("the plan policy needs a world model")
    env_cfg = config.env_config()
    planner = planner or config.planner_config()
    envs = [TrackEnv.from_seed(s, env_cfg) for s in track_seeds]
    n = len(envs)
    obs = [env.reset() for env in envs]
    rngs = [derive_rng(seed, POLICY, i) for i in range(n)]

    if policy == "random":
        walker = RandomWalkPolicy(rngs, config.random_walk_std)
    else:
        fm = model if policy == "plan" else OracleModel(env_cfg)
        agent = PlanningAgent(fm, planner, rngs)
        agent.reset()

    record = {k: [[] for _ in range(n)] for k in ("obs", "act", "rew", "term", "pos", "head")}
    plans: list[list] = [[] for _ in range(n)]
    for i, env in enumerate(envs):
        record["pos"][i].append(env.state.position.copy())
        record["head"][i].append(env.state.heading)
    active = np.ones(n, dtype=bool)
    for t in range(steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        pre_state = None if policy == "random" else agent.state
        if policy == "random":
            actions = walker.act(idx)
        elif policy == "plan":
            actions = agent.act(np.stack([obs[i] for i in idx]), idx)
        else:
            actions = agent.act([(envs[i].spec, envs[i].state) for i in idx], idx)
        for i, a in zip(idx, actions):
            if keep_plans and policy != "random" and t % keep_plans == 0:
                plans[i].append(PlanSnapshot(t, envs[i].state.copy(), agent.last_plans[i].copy(), obs[i], pre_state))
            record["obs"][i].append(obs[i])
            record["act"][i].append(a)
            obs[i], r, done = envs[i].step(a)
            record["rew"][i].append(r)
            record["term"][i].append(done)
            record["pos"][i].append(envs[i].state.position.copy())
            record["head"][i].append(envs[i].state.heading)
            if done:
                active[i] = False

    episodes = []
    for i in range(n):
        rollout = Rollout(
            np.array(record["obs"][i]).reshape(-1, len(obs[i])),
            np.array(record["act"][i]).reshape(-1, len(ACTION_LOW)),
            np.array(record["rew"][i]),
            np.array(record["term"][i], dtype=bool),
            policy,
        )
        episodes.append(
            Episode(
                rollout,
                track_seeds[i],
                np.array(record["pos"][i]),
                np.array(record["head"][i]),
                float(np.sum(record["rew"][i])),
                plans[i],
                i,
            )
        )
    return episodes


def collect_rollouts(
    policy: str,
    n: int,
    steps: int,
    seed: int,
    config: Config = Config(),
    model: WorldModel | None = None,
) -> list[Rollout]:
    """``n`` episodes on tracks ``seed, seed + 1, ...`` truncated at ``steps``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    episodes = run_episodes(policy, range(seed, seed + n), steps, config, model, seed)
    return [e.rollout for e in episodes]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_vae(
    rollouts: Sequence[Rollout],
    epochs: int = 20,
    lr: float = 1e-4,
    batch: int = 64,
    seed: int = 0,
    dims: ModelDims = ModelDims(),
    beta: float = 1.0,
) -> tuple[VAE, list[float]]:
    """Minibatch Adam on shuffled frames. Returns the model and per-epoch mean loss."""
    frames = [r.observations for r in rollouts if len(r)]
    if not frames:
        raise ValueError("train_vae needs at least one non-empty rollout")
    data = np.concatenate(frames).astype(np.float32)
    vae = VAE.initialize(dims, derive_rng(seed, INIT))
    if epochs == 0:
        return vae, []
    rng = derive_rng(seed, SHUFFLE)
    params = ad.parameters(vae.params)
    opt = ad.Adam(params, lr=lr)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), batch):
            x = data[order[start : start + batch]]
            eps = rng.standard_normal((len(x), dims.latent_dim)).astype(np.float32)
            loss = vae_forward_loss(params, x, eps, beta)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += float(loss.data) * len(x)
            count += len(x)
        trace.append(total / count)
        log.info("vae epoch %d loss %.4f", epoch + 1, trace[-1])
    return VAE(dims, ad.values(params)), trace


@dataclass
class LatentRollout:
    latents: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


def encode_rollouts(vae: VAE, rollouts: Sequence[Rollout]) -> list[LatentRollout]:
    """Replace observations by encoder means."""
    out = []
    for r in rollouts:
        mu = vae.encode_batch(r.observations)[0] if len(r) else np.zeros((0, vae.dims.latent_dim), np.float32)
        out.append(LatentRollout(mu, r.actions.copy(), r.rewards.copy(), r.terminals.copy()))
    return out


def _pad_batch(group: Sequence[LatentRollout], L: int, A: int):
    B, T = len(group), max(len(r) for r in group)
    z = np.zeros((B, T + 1, L), np.float32)
    a = np.zeros((B, T, A), np.float32)
    r = np.zeros((B, T), np.float32)
    d = np.zeros((B, T), np.float32)
    step_mask = np.zeros((B, T), np.float32)
    next_mask = np.zeros((B, T), np.float32)
    for b, ro in enumerate(group):
        n = len(ro)
        z[b, :n] = ro.latents
        a[b, :n] = ro.actions
        r[b, :n] = ro.rewards
        d[b, :n] = ro.terminals
        step_mask[b, :n] = 1.0
        next_mask[b, : n - 1] = 1.0  # the last step has no next latent
    return z, a, r, d, step_mask, next_mask


def mdrnn_window_loss(params, dims: ModelDims, z, a, r, d, step_mask, next_mask, h, c):
    """Summed masked loss over a window of steps, starting from state ``(h, c)``.

    Returns ``(loss_sum, h, c)``; the state is returned as graph nodes.
    """
    total = None
    for t in range(a.shape[1]):
        x = np.concatenate([z[:, t], a[:, t]], axis=1)
        h, c = lstm_step(params, x, h, c)
        heads = mdrnn_heads(params, h, dims.mixtures, dims.latent_dim)
        nll, mse, ce = mdrnn_loss_terms(heads, z[:, t + 1], r[:, t], d[:, t])
        step = ad.add(ad.mul(ad.add(mse, ce), step_mask[:, t]), ad.mul(nll, next_mask[:, t]))
        step = ad.sum(step)
        total = step if total is None else ad.add(total, step)
    return total, h, c


def train_mdrnn(
    latent_rollouts: Sequence[LatentRollout],
    epochs: int = 30,
    lr: float = 1e-3,
    batch: int = 16,
    bptt_len: int = 32,
    seed: int = 0,
    dims: ModelDims = ModelDims(),
    init: MDRNN | None = None,
) -> tuple[MDRNN, list[float]]:
    """Teacher-forced next-step training with truncated backpropagation.

    Each minibatch is a group of whole rollouts processed in windows of
    ``bptt_len`` steps; the recurrent state is carried across windows but
    gradients are not. Returns the model and per-epoch mean loss per step.
    """
    data = [r for r in latent_rollouts if len(r) >= 1]
    if not data:
        raise ValueError("train_mdrnn needs at least one non-empty rollout")
    mdrnn = init if init is not None else MDRNN.initialize(dims, derive_rng(seed, INIT, 1))
    dims = mdrnn.dims
    if epochs == 0:
        return mdrnn, []
    rng = derive_rng(seed, SHUFFLE, 1)
    params = ad.parameters(mdrnn.params)
    opt = ad.Adam(params, lr=lr)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0.0
        for start in range(0, len(data), batch):
            group = [data[i] for i in order[start : start + batch]]
            z, a, r, d, sm, nm = _pad_batch(group, dims.latent_dim, dims.action_dim)
            state = WorldModelState.zeros(dims.hidden_dim, len(group))
            h, c = state.h, state.c
            for w0 in range(0, a.shape[1], bptt_len):
                w = slice(w0, w0 + bptt_len)
                n_valid = float(sm[:, w].sum())
                if n_valid == 0:
                    break
                zw = z[:, w0 : w0 + bptt_len + 1]
                loss_sum, h, c = mdrnn_window_loss(params, dims, zw, a[:, w], r[:, w], d[:, w], sm[:, w], nm[:, w], h, c)
                loss = ad.mul(loss_sum, 1.0 / n_valid)
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
                h, c = h.data, c.data
                total += float(loss_sum.data)
                count += n_valid
        trace.append(total / count)
        log.info("mdrnn epoch %d loss %.4f", epoch + 1, trace[-1])
    return MDRNN(dims, ad.values(params)), trace


# ---------------------------------------------------------------------------
# evaluation and experiment procedures
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    scores: np.ndarray
    track_seeds: list[int]
    config: Config
    label: str = ""
    wall_clock: float = 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))

    def summary(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"

    def to_csv(self) -> str:
        """Per-track scores with the resolved config echoed as ``#`` comments."""
        lines = [f"# report {self.label}".rstrip()]
        lines += [f"# {line}" for line in self.config.to_text().splitlines()]
        lines.append(f"# mean = {self.mean:.6f}")
        lines.append(f"# std = {self.std:.6f}")
        lines.append("track,seed,score")
        lines += [f"{i},{s},{v:.6f}" for i, (s, v) in enumerate(zip(self.track_seeds, self.scores))]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def evaluate(
    model: WorldModel | None,
    planner: PlannerConfig,
    n_tracks: int,
    seed: int,
    config: Config = Config(),
    policy: str = "plan",
    label: str = "",
) -> EvalReport:
    """Score ``policy`` on tracks ``seed .. seed + n_tracks - 1`` for ``t_max`` steps."""
    start = time.perf_counter()
    seeds = list(range(seed, seed + n_tracks))
    episodes = run_episodes(policy, seeds, config.t_max, config, model, seed, planner)
    scores = np.array([e.score for e in episodes])
    report = EvalReport(scores, seeds, config, label or policy, time.perf_counter() - start)
    log.info("evaluate %s: %s", report.label, report.summary())
    return report


def train_world_model(
    rollouts: Sequence[Rollout], config: Config, vae: VAE | None = None
) -> tuple[WorldModel, dict[str, list[float]]]:
    """Train (or reuse) the VAE, encode the rollouts and train the MDN-RNN."""
    traces = {}
    dims = config.model_dims()
    if vae is None:
        vae, traces["vae"] = train_vae(
            rollouts, config.vae_epochs, config.vae_lr, config.vae_batch, config.seed, dims, config.kl_weight
        )
    latent = encode_rollouts(vae, rollouts)
    mdrnn, traces["mdrnn"] = train_mdrnn(
        latent, config.mdrnn_epochs, config.mdrnn_lr, config.mdrnn_batch, config.bptt_len, config.seed, dims
    )
    return WorldModel(vae, mdrnn), traces


def _persist(out_dir: Path | None, name: str, model: WorldModel, report: EvalReport) -> None:
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / f"{name}.ckpt", model.to_tensors())
    report.write(out_dir / f"{name}.csv")


@dataclass
class RunResult:
    model: WorldModel
    reports: list[EvalReport]
    rollouts: list[Rollout]
    traces: dict[str, list[float]] = field(default_factory=dict)

    @property
    def report(self) -> EvalReport:
        return self.reports[-1]


def run_noniterative(config: Config = Config(), out_dir: str | Path | None = None) -> RunResult:
    """Collect random rollouts, train the world model, evaluate the planner."""
    out = Path(out_dir) if out_dir is not None else None
    rollouts = collect_rollouts("random", config.random_rollouts, config.rollout_steps, config.seed, config)
    if out is not None:
        write_rollouts(out / "rollouts", rollouts)
    model, traces = train_world_model(rollouts, config)
    report = evaluate(model, config.planner_config(), config.eval_tracks, config.eval_seed, config, label="noniterative")
    _persist(out, "model", model, report)
    return RunResult(model, [report], rollouts, traces)


def run_iterative(
    config: Config = Config(),
    out_dir: str | Path | None = None,
    baseline: RunResult | None = None,
) -> RunResult:
    """Baseline model, then ``config.iterations`` rounds of plan-collect-retrain-evaluate.

    The VAE stays frozen after the baseline. The MDN-RNN is fine-tuned on the
    whole replay buffer for ``iteration_epochs`` epochs per iteration.
    Artifacts of each finished iteration are flushed before the next starts.
    """
    out = Path(out_dir) if out_dir is not None else None
    base = baseline or run_noniterative(config)
    model = base.model
    reports = [base.reports[0]]
    _persist(out, "iteration_0", model, reports[0])
    _write_iterations_csv(out, reports)
    buffer = ReplayBuffer(config.buffer_capacity)
    buffer.add(base.rollouts)
    next_seed = config.seed + config.random_rollouts
    for it in range(1, config.iterations + 1):
        fresh = collect_rollouts("plan", config.rollouts_per_iteration, config.rollout_steps, next_seed, config, model)
        next_seed += config.rollouts_per_iteration
        buffer.add(fresh)
        latent = encode_rollouts(model.vae, buffer.rollouts)
        mdrnn, _ = train_mdrnn(
            latent,
            config.iteration_epochs,
            config.mdrnn_lr,
            config.mdrnn_batch,
            config.bptt_len,
            config.seed + it,
            init=model.mdrnn,
        )
        model = WorldModel(model.vae, mdrnn)
        report = evaluate(model, config.planner_config(), config.eval_tracks, config.eval_seed, config, label=f"iteration {it}")
        reports.append(report)
        _persist(out, f"iteration_{it}", model, report)
        _write_iterations_csv(out, reports)
    return RunResult(model, reports, buffer.rollouts, base.traces)


def _write_iterations_csv(out: Path | None, reports: Sequence[EvalReport]) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    rows = ["iteration,mean,std"] + [f"{i},{r.mean:.6f},{r.std:.6f}" for i, r in enumerate(reports)]
    (out / "iterations.csv").write_text("\n".join(rows) + "\n")


def run_expert_mix(config: Config = Config(), vae: VAE | None = None) -> RunResult:
    """Train the MDN-RNN on half random, half oracle-planner rollouts and evaluate.

    The oracle planner (RMHC on the true dynamics) stands in for an expert.
    """
    half = max(config.random_rollouts // 2, 1)
    random_part = collect_rollouts("random", half, config.rollout_steps, config.seed, config)
    oracle_part = collect_rollouts("oracle", half, config.rollout_steps, config.seed + half, config)
    rollouts = random_part + oracle_part
    if vae is None:
        vae, _ = train_vae(
            random_part, config.vae_epochs, config.vae_lr, config.vae_batch, config.seed, config.model_dims(), config.kl_weight
        )
    model, traces = train_world_model(rollouts, config, vae=vae)
    report = evaluate(model, config.planner_config(), config.eval_tracks, config.eval_seed, config, label="expert mix")
    return RunResult(model, [report], rollouts, traces)


def sweep(
    parameter: str,
    values: Sequence[int],
    model: WorldModel,
    n_tracks: int,
    seed: int,
    config: Config = Config(),
) -> list[tuple[int, EvalReport]]:
    """One evaluation per value of ``horizon`` or ``generations``; duplicates are kept."""
    if parameter not in ("horizon", "generations"):
        raise ValueError(f"can only sweep horizon or generations, not {parameter!r}")
    rows = []
    for v in values:
        cfg = config.replace(**{parameter: int(v)})
        rows.append((int(v), evaluate(model, cfg.planner_config(), n_tracks, seed, cfg, label=f"{parameter}={v}")))
    return rows


def sweep_csv(parameter: str, rows: Sequence[tuple[int, EvalReport]]) -> str:
    lines = [f"{parameter},mean,std"] + [f"{v},{r.mean:.6f},{r.std:.6f}" for v, r in rows]
    return "\n".join(lines) + "\n"
