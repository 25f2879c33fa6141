"""Deterministic seed derivation.

Every randomized stage draws from its own stream, derived from one master
seed and a stage name, so that stages stay independent of each other.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(master: int, *names: str | int) -> np.random.SeedSequence:
    key = [int(master)]
    for n in names:
        key.append(zlib.crc32(str(n).encode()))
    return np.random.SeedSequence(key)


def rng(master: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))


def int_seed(master: int, *names: str | int) -> int:
    return int(derive_seed(master, *names).generate_state(1, dtype=np.uint32)[0])
