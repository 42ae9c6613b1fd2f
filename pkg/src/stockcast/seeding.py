"""Labeled sub-seed fan-out.

Every command draws all randomness from one root seed; independent consumers
(init, shuffle, dropout, synthetic data) get their own generator keyed by a
string label so adding one consumer never shifts another's stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def sub_seed(root: int, label: str) -> np.random.SeedSequence:
    if root < 0:
        raise ValueError(f"seed must be non-negative, got {root}")
    return np.random.SeedSequence([int(root), zlib.crc32(label.encode("utf-8"))])


def sub_rng(root: int, label: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(root, label))
