"""Rollout records, the replay buffer and the rollout file format.

Rollout file (little-endian)::

    b"EPLSROLL" | u32 version | u32 obs_dim | u32 action_dim | u32 T
    T x ( f32[obs_dim] obs | f32[action_dim] action | f32 reward | u8 terminal )
    u32 crc32 of everything above

A rollout directory holds one such file per episode plus ``manifest.txt``
listing ``filename policy`` pairs, one per line.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from latentplan.checkpoint import CorruptFileError, strip_crc, with_crc

MAGIC = b"EPLSROLL"
VERSION = 1
MANIFEST = "manifest.txt"
POLICIES = ("random", "plan", "oracle")


@dataclass
class Rollout:
    observations: np.ndarray  # (T, obs_dim) float32
    actions: np.ndarray  # (T, action_dim) float32
    rewards: np.ndarray  # (T,) float32
    terminals: np.ndarray  # (T,) bool
    policy: str = "random"

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        self.rewards = np.asarray(self.rewards, dtype=np.float32)
        self.terminals = np.asarray(self.terminals, dtype=bool)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards, dtype=np.float64))

    def validate(self) -> None:
        T = len(self.rewards)
        if not (len(self.observations) == len(self.actions) == len(self.terminals) == T):
            raise ValueError("rollout sequences differ in length")
        if T and self.terminals[:-1].any():
            raise ValueError("terminal flag set before the final step")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy tag {self.policy!r}")


def _record_dtype(obs_dim: int, action_dim: int) -> np.dtype:
    return np.dtype(
        [("obs", "<f4", (obs_dim,)), ("action", "<f4", (action_dim,)), ("reward", "<f4"), ("terminal", "u1")]
    )


def encode_rollout(rollout: Rollout) -> bytes:
    T, obs_dim = rollout.observations.shape
    action_dim = rollout.actions.shape[1]
    records = np.zeros(T, dtype=_record_dtype(obs_dim, action_dim))
    records["obs"] = rollout.observations
    records["action"] = rollout.actions
    records["reward"] = rollout.rewards
    records["terminal"] = rollout.terminals
    header = MAGIC + struct.pack("<IIII", VERSION, obs_dim, action_dim, T)
    return with_crc(header + records.tobytes())


def decode_rollout(blob: bytes, policy: str = "random", what: str = "rollout") -> Rollout:
    payload = strip_crc(blob, what)
    if payload[:8] != MAGIC:
        raise CorruptFileError(f"{what}: bad magic")
    if len(payload) < 24:
        raise CorruptFileError(f"{what}: truncated header")
    version, obs_dim, action_dim, T = struct.unpack_from("<IIII", payload, 8)
    if version != VERSION:
        raise CorruptFileError(f"{what}: unsupported version {version}")
    dtype = _record_dtype(obs_dim, action_dim)
    if len(payload) != 24 + T * dtype.itemsize:
        raise CorruptFileError(f"{what}: length does not match header")
    records = np.frombuffer(payload, dtype=dtype, count=T, offset=24)
    return Rollout(
        records["obs"].copy(),
        records["action"].copy(),
        records["reward"].copy(),
        records["terminal"].astype(bool),
        policy,
    )


def write_rollouts(directory: str | Path, rollouts: Iterable[Rollout], prefix: str = "rollout") -> list[Path]:
    """Write one file per rollout and (re)write the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths, lines = [], []
    for i, r in enumerate(rollouts):
        name = f"{prefix}_{i:05d}.bin"
        (directory / name).write_bytes(encode_rollout(r))
        paths.append(directory / name)
        lines.append(f"{name} {r.policy}\n")
    (directory / MANIFEST).write_text("".join(lines))
    return paths


def read_rollouts(directory: str | Path) -> list[Rollout]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    out = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, policy = line.split()
        path = directory / name
        out.append(decode_rollout(path.read_bytes(), policy, what=str(path)))
    return out


class ReplayBuffer:
    """Bounded rollout store with oldest-first eviction."""

    def __init__(self, capacity: int = 500):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Rollout] = deque(maxlen=capacity)

    def add(self, rollouts: Iterable[Rollout]) -> None:
        for r in rollouts:
            r.validate()
            self._items.append(r)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Rollout]:
        return iter(self._items)

    @property
    def rollouts(self) -> list[Rollout]:
        return list(self._items)
