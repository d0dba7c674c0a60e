"""Deterministic stream derivation for reproducible parallel experiments.

A run is keyed by a base seed plus a tuple of tags (strings and integers).
The same key always yields the same PCG64 stream, independent of platform,
worker count, or scheduling order, so replicates can run in any order and
still merge into byte-identical output.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_words(tags) -> list[int]:
    words = []
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        elif isinstance(tag, (int, np.integer)):
            words.append(int(tag) & 0xFFFFFFFF)
            words.append((int(tag) >> 32) & 0xFFFFFFFF)
        else:
            raise TypeError(f"unsupported stream tag {tag!r}")
    return words


def seed_sequence(base_seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF] + _tag_words(tags))


def stream(base_seed: int, *tags) -> np.random.Generator:
    """Independent generator for the given (base_seed, *tags) key."""
    return np.random.Generator(np.random.PCG64(seed_sequence(base_seed, *tags)))
