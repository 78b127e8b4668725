"""Named random streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``(seed, name)``; stable across processes and runs."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream_key(name)]))


def child_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([int(seed), stream_key(name)]).generate_state(1)[0])
