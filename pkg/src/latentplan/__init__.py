"""Evolutionary planning in the latent space of a learned world model.

Modules:
    autodiff: reverse-mode differentiation and Adam on numpy arrays.
    worldmodel: VAE and mixture-density LSTM.
    env: procedural racing track with a rasterised observation.
    planner: random mutation hill climbing with shift buffering.
    pipeline: data collection, training and experiment procedures.
    cli: command-line interface.
"""

__version__ = "0.1.0"
