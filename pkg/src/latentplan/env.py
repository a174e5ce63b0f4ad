"""Desk-scale track-following car environment.

A procedurally generated open track is split into ``n_tiles`` tiles of equal
arc length. The car is a kinematic unicycle with speed-proportional turning.
Rewards follow the tile scheme: ``-0.1`` per step and ``1000 / n_tiles`` for
every newly visited tile. Leaving the track ends the episode immediately.

The observation is a 16x16 grayscale raster centred on the car and rotated
so that the car always faces up; the bottom row is a speed bar.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

RASTER = 16
OBS_DIM = RASTER * RASTER
ACTION_DIM = 3
ACTION_LOW = np.array([-1.0, 0.0, 0.0])
ACTION_HIGH = np.array([1.0, 1.0, 1.0])

STEP_REWARD = -0.1
TILE_REWARD_TOTAL = 1000.0


class UsageError(RuntimeError):
    """The environment was driven in an invalid order."""


@dataclass(frozen=True)
class EnvConfig:
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
    max_curvature: float = 0.3  # radians per unit length; car turning radius is v_max / omega_max
    turn_length: float = 5.0  # arc length of the curvature smoothing window
    curvature_scale: float = 1.0  # 0 yields a straight track
    turn_bias: float = 0.0  # >0 favours left turns, <0 right turns
    straight_start: int = 4
    pixel_size: float = 0.25

    def __post_init__(self):
        if self.n_tiles < 10:
            raise ValueError(f"n_tiles must be >= 10, got {self.n_tiles}")


@dataclass(frozen=True)
class TrackSpec:
    """Centerline polyline with ``n_tiles + 1`` points; tile i spans points i..i+1."""

    centerline: np.ndarray
    headings: np.ndarray
    tile_length: float
    half_width: float
    seed: int | None = None

    @property
    def n_tiles(self) -> int:
        return len(self.centerline) - 1


@dataclass(frozen=True)
class CarState:
    position: np.ndarray
    heading: float
    speed: float
    visited: np.ndarray
    tile: int
    t: int = 0
    done: bool = False

    def copy(self) -> CarState:
        return replace(self, position=self.position.copy(), visited=self.visited.copy())


def clip_action(action) -> np.ndarray:
    return np.clip(np.asarray(action, dtype=np.float64), ACTION_LOW, ACTION_HIGH)


def generate_track(seed: int | None, config: EnvConfig = EnvConfig()) -> TrackSpec:
    """Smooth open track from low-pass filtered random curvature.

    Heading is kept inside ``(-0.45 pi, 0.45 pi)`` so the curve can never
    cross itself.
    """
    rng = np.random.default_rng(seed)
    n = config.n_tiles
    width = max(int(round(config.turn_length / config.tile_length)), 3)
    raw = rng.normal(loc=config.turn_bias, scale=1.0, size=n + width - 1)
    window = np.hanning(width + 2)[1:-1]
    window /= window.sum()
    smooth = np.convolve(raw, window, mode="valid")[:n]
    smooth /= max(np.std(smooth - config.turn_bias), 1e-9)
    max_turn = config.max_curvature * config.tile_length
    deltas = np.clip(0.6 * max_turn * smooth, -max_turn, max_turn)
    deltas *= config.curvature_scale
    deltas[: config.straight_start] = 0.0

    limit = 0.45 * np.pi
    headings = np.empty(n)
    theta = 0.0
    for i in range(n):
        nxt = theta + deltas[i]
        if abs(nxt) > limit:
            nxt = theta - deltas[i]
        theta = nxt
        headings[i] = theta
    steps = config.tile_length * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    centerline = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return TrackSpec(centerline, headings, config.tile_length, config.half_width, seed)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from ``points`` (P, 2) to segments ``a->b`` (S, 2): returns (P, S)."""
    ab = b - a
    denom = np.einsum("sd,sd->s", ab, ab)
    ap = points[:, None, :] - a[None, :, :]
    u = np.clip(np.einsum("psd,sd->ps", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + u[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def locate(spec: TrackSpec, position: np.ndarray, near_tile: int, span: int = 3) -> tuple[int, float]:
    """Nearest tile to ``position`` among tiles within ``span`` of ``near_tile``."""
    lo = max(near_tile - span, 0)
    hi = min(near_tile + span + 1, spec.n_tiles)
    a = spec.centerline[lo:hi]
    b = spec.centerline[lo + 1 : hi + 1]
    d = _segment_distance(position[None, :], a, b)[0]
    k = int(np.argmin(d))
    return lo + k, float(d[k])


def initial_state(spec: TrackSpec) -> CarState:
    """Car at the centre of tile 0, facing along the track, at rest.

    No tile is credited yet: the first step credits tile 0, so that a full
    traversal collects exactly ``1000`` in tile rewards.
    """
    start = 0.5 * (spec.centerline[0] + spec.centerline[1])
    return CarState(
        position=start,
        heading=float(spec.headings[0]),
        speed=0.0,
        visited=np.zeros(spec.n_tiles, dtype=bool),
        tile=0,
    )


def transition(
    spec: TrackSpec, state: CarState, action, config: EnvConfig = EnvConfig()
) -> tuple[CarState, float, bool]:
    """Ground-truth dynamics: returns ``(next_state, reward, terminal)``."""
    if state.done:
        raise UsageError("step called after the episode terminated")
    steer, accel, brake = clip_action(action)
    dt = config.dt
    v = state.speed
    v = v + accel * config.a_max * dt - brake * config.b_max * dt - config.c_drag * v * dt
    v = float(min(max(v, 0.0), config.v_max))
    heading = state.heading + steer * config.omega_max * dt * (v / config.v_max)
    position = state.position + v * dt * np.array([np.cos(heading), np.sin(heading)])

    tile, dist = locate(spec, position, state.tile)
    visited = state.visited
    reward = STEP_REWARD
    off_track = dist > spec.half_width
    if not off_track:
        lo = min(state.tile + int(visited[state.tile]), tile)
        fresh = ~visited[lo : tile + 1]
        n_new = int(fresh.sum())
        if n_new:
            visited = visited.copy()
            visited[lo : tile + 1] = True
            reward += (TILE_REWARD_TOTAL / spec.n_tiles) * n_new
    else:
        tile = state.tile
    t = state.t + 1
    terminal = bool(off_track or visited.all() or t >= config.t_max)
    nxt = CarState(position, float(heading), v, visited, tile, t, terminal)
    return nxt, reward, terminal


def oracle_dynamics(spec: TrackSpec, state: CarState, action, config: EnvConfig = EnvConfig()) -> CarState:
    return transition(spec, state, action, config)[0]


def _pixel_offsets(config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(RASTER - 1)
    cols = np.arange(RASTER)
    forward = (8 - rows)[:, None] * config.pixel_size * np.ones((1, RASTER))
    lateral = np.ones((RASTER - 1, 1)) * (cols - 7.5)[None, :] * config.pixel_size
    return forward.ravel(), lateral.ravel()


def render_observation(spec: TrackSpec, state: CarState, config: EnvConfig = EnvConfig()) -> np.ndarray:
    """Flattened 16x16 raster in ``[0, 1]``.

    Rows 0-14 show the track around the car (car at row 8, between columns 7
    and 8, facing row 0); row 15 is the speed bar.
    """
    forward, lateral = _pixel_offsets(config)
    c, s = np.cos(state.heading), np.sin(state.heading)
    px = state.position[0] + forward * c + lateral * s
    py = state.position[1] + forward * s - lateral * c
    points = np.stack([px, py], axis=1)

    radius = np.hypot(8.0, 8.0) * config.pixel_size + spec.tile_length
    mid = 0.5 * (spec.centerline[:-1] + spec.centerline[1:])
    near = np.linalg.norm(mid - state.position, axis=1) <= radius + spec.half_width
    raster = np.zeros((RASTER, RASTER), dtype=np.float32)
    if near.any():
        idx = np.flatnonzero(near)
        d = _segment_distance(points, spec.centerline[idx], spec.centerline[idx + 1])
        on = d.min(axis=1) <= spec.half_width
        raster[: RASTER - 1] = on.reshape(RASTER - 1, RASTER)
    bar = int(np.floor(RASTER * state.speed / config.v_max + 1e-9))
    raster[RASTER - 1, : min(bar, RASTER)] = 1.0
    return raster.ravel()


@dataclass
class TrackEnv:
    """Stateful wrapper around :func:`transition` and :func:`render_observation`."""

    spec: TrackSpec
    config: EnvConfig = field(default_factory=EnvConfig)
    state: CarState | None = None

    @classmethod
    def from_seed(cls, seed: int, config: EnvConfig | None = None) -> TrackEnv:
        config = config or EnvConfig()
        return cls(generate_track(seed, config), config)

    def reset(self) -> np.ndarray:
        self.state = initial_state(self.spec)
        return render_observation(self.spec, self.state, self.config)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise UsageError("reset must be called before step")
        self.state, reward, terminal = transition(self.spec, self.state, action, self.config)
        return render_observation(self.spec, self.state, self.config), reward, terminal
