"""Deterministic random-stream management.

Every stochastic component draws from a named substream derived from a single
experiment seed, so runs are reproducible and adding draws to one component
never perturbs another. A stream is addressed by (seed, label, index):

    rng = stream(seed, "train/noise", iteration)

Labels are hashed with crc32 into the SeedSequence spawn key, which keeps the
scheme stable across processes and library versions.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the generator for substream (seed, label, index)."""
    key = zlib.crc32(label.encode("utf-8"))
    seq = np.random.SeedSequence(seed, spawn_key=(key, index))
    return np.random.default_rng(seq)
