"""SVG rendering of a driven episode and, optionally, the imagined plans.

Imagined trajectories are reconstructed from the world model alone: the plan
is rolled out in latent space, each latent is decoded to a raster, the speed
is read back from the raster's speed bar and the car pose is dead-reckoned
with the plan's steering.
"""

from __future__ import annotations

from xml.sax.saxutils import quoteattr

import numpy as np

from latentplan.env import RASTER, EnvConfig, TrackSpec
from latentplan.pipeline import Episode, PlanSnapshot
from latentplan.worldmodel import WorldModel

MARGIN = 1.0
SCALE = 40.0  # pixels per world unit


def decoded_speed(raster: np.ndarray, config: EnvConfig) -> float:
    """Speed implied by the bottom-row bar of a (possibly decoded) raster."""
    bar = np.asarray(raster).reshape(RASTER, RASTER)[RASTER - 1]
    return float(np.clip(bar, 0.0, 1.0).sum()) / RASTER * config.v_max


def imagined_path(model: WorldModel, snap: PlanSnapshot, lane: int, config: EnvConfig) -> np.ndarray:
    """World-frame positions ``(H + 1, 2)`` of the car along an imagined plan."""
    z = model.encode(snap.obs[None])
    state = model.take(snap.model_state, np.array([lane]))
    _, _, latents = model.imagine(z, state, snap.plan[None], return_latents=True)
    frames = model.vae.decode_batch(latents[0, 1:])
    pos = np.array(snap.car.position, dtype=float)
    heading = float(snap.car.heading)
    path = [pos.copy()]
    for frame, action in zip(frames, snap.plan):
        v = decoded_speed(frame, config)
        heading += float(np.clip(action[0], -1, 1)) * config.omega_max * config.dt * (v / config.v_max)
        pos = pos + v * config.dt * np.array([np.cos(heading), np.sin(heading)])
        path.append(pos.copy())
    return np.array(path)


def _ribbon(spec: TrackSpec) -> np.ndarray:
    """Closed outline of the drivable strip around the centreline."""
    c = spec.centerline
    d = np.gradient(c, axis=0)
    n = np.stack([-d[:, 1], d[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    left = c + spec.half_width * n
    right = c - spec.half_width * n
    return np.vstack([left, right[::-1]])


def _path_d(points: np.ndarray, transform, closed: bool = False) -> str:
    xy = [transform(p) for p in points]
    d = "M " + " L ".join(f"{x:.3f},{y:.3f}" for x, y in xy)
    return d + (" Z" if closed else "")


def render_svg(
    spec: TrackSpec,
    episode: Episode,
    model: WorldModel | None = None,
    config: EnvConfig = EnvConfig(),
    show_plans: bool = False,
) -> str:
    """SVG 1.1 document with one ``<path>`` per layer.

    Layers: the track ribbon, the executed trajectory and, with
    ``show_plans``, one faint path per stored plan snapshot.
    """
    ribbon = _ribbon(spec)
    imagined = []
    if show_plans:
        if model is None:
            raise ValueError("show_plans needs a world model")
        imagined = [imagined_path(model, s, episode.lane, config) for s in episode.plans]
    pts = np.vstack([ribbon, episode.positions] + imagined)
    lo = pts.min(axis=0) - MARGIN
    hi = pts.max(axis=0) + MARGIN
    width, height = (hi - lo) * SCALE

    def transform(p):
        return (p[0] - lo[0]) * SCALE, (hi[1] - p[1]) * SCALE

    title = f"track {episode.track_seed}: reward {episode.score:.1f} over {len(episode.rollout)} steps"
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.1f} {height:.1f}">',
        f"<title>{title}</title>",
        f'<path id="track" d="{_path_d(ribbon, transform, closed=True)}" fill="#d0d0d0" stroke="#909090" stroke-width="1"/>',
        f'<path id="executed" d="{_path_d(episode.positions, transform)}" fill="none" stroke="#c0392b" stroke-width="2"/>',
    ]
    for snap, path in zip(episode.plans, imagined):
        out.append(
            f'<path id={quoteattr(f"plan-{snap.t}")} d="{_path_d(path, transform)}" fill="none" '
            'stroke="#2471a3" stroke-width="1" stroke-opacity="0.35"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
