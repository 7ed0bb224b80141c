"""Stage-keyed random streams.

Every pipeline stage draws from its own ``SeedSequence`` derived from the
user seed and a stable hash of the stage name, so adding a stage never
shifts the streams of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _stage_key(stage: str) -> int:
    return int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")


def seed_sequence(seed: int, stage: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(_stage_key(stage), *map(int, extra)))


def rng(seed: int, stage: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, stage, *extra))
