"""One seed hierarchy for everything random.

Every component derives its generator from (root seed, purpose label), so
subcommands can be re-run in isolation and still reproduce the exact
stream they saw inside a full pipeline run.
"""

from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(root_seed: int, *keys: str | int) -> np.random.SeedSequence:
    entropy: list[int] = [int(root_seed)]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.SeedSequence(entropy)


def derive_rng(root_seed: int, *keys: str | int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root_seed, *keys))
