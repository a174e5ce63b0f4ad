# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Track environment and RMHC planning
#
# A tour of the desk environment and of the hill-climbing planner driven by
# the true dynamics. Nothing here is learned, so it runs in seconds.

# %%
import numpy as np

from latentplan.config import Config
from latentplan.env import EnvConfig, TrackEnv, generate_track
from latentplan import pipeline as P

env_cfg = EnvConfig()
spec = generate_track(7, env_cfg)
print(f"{spec.n_tiles} tiles, half width {spec.half_width}")

# %% [markdown]
# Each observation is a 16x16 egocentric raster. The bottom row is a speed bar.

# %%
env = TrackEnv.from_seed(7, env_cfg)
obs = env.reset()
for _ in range(10):
    obs, reward, done = env.step(np.array([0.0, 1.0, 0.0]))
print(obs.reshape(16, 16).round(1)[-3:])

# %% [markdown]
# ## Random walk against the oracle planner
#
# The oracle planner runs RMHC on the ground-truth transition function. It
# bounds what any learned model can reach with the same planner budget.

# %%
cfg = Config(t_max=150, horizon=10, generations=5)
tracks = [100, 101, 102]
random_eps = P.run_episodes("random", tracks, cfg.t_max, cfg, seed=0)
oracle_eps = P.run_episodes("oracle", tracks, cfg.t_max, cfg, seed=0)
for r, o in zip(random_eps, oracle_eps):
    print(f"track {r.track_seed}: random {r.score:7.1f}   oracle {o.score:7.1f}")
