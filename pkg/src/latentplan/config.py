"""Flat ``key = value`` experiment configuration.

Every tunable of the environment, models, training, planner and pipeline
lives in :class:`Config`. Files may contain blank lines and ``#`` comments;
unknown keys are rejected and missing keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from latentplan.env import EnvConfig
from latentplan.planner import PlannerConfig
from latentplan.worldmodel import ModelDims


@dataclass(frozen=True)
class Config:
    # environment
    n_tiles: int = 100
    tile_length: float = 0.1
    half_width: float = 0.5
    dt: float = 0.1
    v_max: float = 2.0
    a_max: float = 1.0
    b_max: float = 2.0
    c_drag: float = 0.05
    omega_max: float = 1.0
    t_max: int = 200
    max_curvature: float = 0.3
    turn_length: float = 5.0
    turn_bias: float = 0.0
    pixel_size: float = 0.25
    # world model
    latent_dim: int = 8
    hidden_dim: int = 64
    mixtures: int = 3
    kl_weight: float = 1.0
    # training
    vae_epochs: int = 20
    vae_lr: float = 1e-4
    vae_batch: int = 64
    mdrnn_epochs: int = 30
    mdrnn_lr: float = 1e-3
    mdrnn_batch: int = 16
    bptt_len: int = 32
    iteration_epochs: int = 10
    # planner
    horizon: int = 20
    generations: int = 10
    p_mut: float = 0.3
    sigma_mut: float = 0.3
    terminal_threshold: float = 0.5
    sample_latents: bool = False
    # data collection and evaluation
    random_rollouts: int = 200
    rollout_steps: int = 100
    random_walk_std: float = 0.2
    eval_tracks: int = 20
    iterations: int = 3
    rollouts_per_iteration: int = 50
    buffer_capacity: int = 500
    seed: int = 0
    eval_seed: int = 1_000_000

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            n_tiles=self.n_tiles,
            tile_length=self.tile_length,
            half_width=self.half_width,
            dt=self.dt,
            v_max=self.v_max,
            a_max=self.a_max,
            b_max=self.b_max,
            c_drag=self.c_drag,
            omega_max=self.omega_max,
            t_max=self.t_max,
            max_curvature=self.max_curvature,
            turn_length=self.turn_length,
            turn_bias=self.turn_bias,
            pixel_size=self.pixel_size,
        )

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(
            horizon=self.horizon,
            generations=self.generations,
            p_mut=self.p_mut,
            sigma_mut=self.sigma_mut,
            terminal_threshold=self.terminal_threshold,
        )

    def model_dims(self) -> ModelDims:
        return ModelDims(latent_dim=self.latent_dim, hidden_dim=self.hidden_dim, mixtures=self.mixtures)

    def replace(self, **changes) -> Config:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> Config:
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _coerce(raw, types[key], key)
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path) -> Config:
        return cls.from_text(Path(path).read_text())


def _coerce(raw: str, kind, key: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw.replace("_", ""))
        return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
