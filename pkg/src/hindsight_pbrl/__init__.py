"""Desk-scale offline preference-based RL toolkit.

Learns step-wise rewards from pairwise segment preferences two ways -- the
Markovian baseline and a future-conditioned model whose per-step reward
sees a learned code summarizing the next k steps -- then labels unlabeled
trajectories (marginalizing the code under a learned prior) and optimizes
a policy offline with implicit Q-learning.
"""

__version__ = "0.1.0"

from . import config, datasets, envs, experiments, hindsight_vae, numcore
from . import pipeline, preference, rl

__all__ = [
    "config",
    "datasets",
    "envs",
    "experiments",
    "hindsight_vae",
    "numcore",
    "pipeline",
    "preference",
    "rl",
]
