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
# # Learning a world model and planning inside it
#
# A shrunken version of the full experiment: random rollouts, VAE and
# MDN-RNN training, evaluation of the latent-space planner, then one round of
# iterative training. The default `Config()` reproduces the full-size run
# (roughly 10 minutes for the non-iterative stage).

# %%
from pathlib import Path
import tempfile

from latentplan.config import Config
from latentplan import pipeline as P
from latentplan.viz import render_svg
from latentplan.env import generate_track

cfg = Config(
    random_rollouts=40, rollout_steps=60, vae_epochs=5, mdrnn_epochs=5, iteration_epochs=3,
    t_max=100, horizon=10, generations=5, eval_tracks=4, rollouts_per_iteration=10, iterations=1,
)
out = Path(tempfile.mkdtemp())

# %%
base = P.run_noniterative(cfg, out / "noniterative")
print("learned planner:", base.report.summary())
print("VAE loss by epoch:", [round(v, 2) for v in base.traces["vae"]])

# %% [markdown]
# Baselines on the same evaluation tracks.

# %%
planner = cfg.planner_config()
for policy in ("random", "oracle"):
    rep = P.evaluate(None, planner, cfg.eval_tracks, cfg.eval_seed, cfg, policy=policy)
    print(f"{policy:>7}: {rep.summary()}")

# %% [markdown]
# ## One iteration of retraining on planner rollouts

# %%
it = P.run_iterative(cfg, out / "iterative", baseline=base)
for i, rep in enumerate(it.reports):
    print(f"iteration {i}: {rep.summary()}")

# %% [markdown]
# ## Executed path and imagined plans

# %%
track = cfg.eval_seed
(episode,) = P.run_episodes("plan", [track], cfg.t_max, cfg, it.model, track, keep_plans=10)
svg = render_svg(generate_track(track, cfg.env_config()), episode, it.model, cfg.env_config(), show_plans=True)
(out / "episode.svg").write_text(svg)
print(out / "episode.svg")
