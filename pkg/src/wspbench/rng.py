"""Keyed random streams: one independent generator per (seed, key)."""
from __future__ import annotations

import hashlib

import numpy as np


def key_words(key: str) -> list[int]:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def keyed_rng(seed: int, *keys: str) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        entropy.extend(key_words(k))
    return np.random.default_rng(np.random.SeedSequence(entropy))
