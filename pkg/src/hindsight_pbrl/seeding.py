"""Deterministic seed derivation.

A master seed plus a label path maps to a child seed through SHA-256, so
every stage of a run gets an independent, reproducible random stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels: str | int) -> int:
    key = ":".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1  # fits in a signed 64-bit


def rng_for(master: int, *labels: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
