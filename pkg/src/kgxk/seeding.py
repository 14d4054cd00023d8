"""Deterministic RNG stream derivation.

Every stochastic component draws from its own named stream so that adding
or removing draws in one component never shifts another component's
sequence (e.g. view sampling must not perturb negative sampling).
"""

from __future__ import annotations

import zlib

import numpy as np


def derived_rng(seed: int, *labels: str) -> np.random.Generator:
    """Return a generator for the stream identified by ``seed`` and ``labels``."""
    keys = [int(seed)] + [zlib.crc32(label.encode("utf-8")) for label in labels]
    return np.random.default_rng(keys)
