"""Counter-based deterministic random substreams.

All randomness in the package flows through Philox generators keyed by
(master seed, purpose, index...). Philox is counter-based, so distinct
substreams never share state: advancing one cursor cannot consume
randomness from any other, which is what makes client chains independent
and runs bit-reproducible regardless of execution order.

A stream position is measured in double draws. Philox buffers 4 doubles
per counter block, so a position is restored with advance(n // 4) plus
discarding n % 4 draws.
"""

from __future__ import annotations

import numpy as np

# Purpose tags for substream spawn keys. Keeping them distinct guarantees
# e.g. problem generation never overlaps the chain streams of any client.
CHAIN = 0
NOISE = 1
PROBLEM = 2
OUTPUT = 3
PARTITION = 4
VERIFIER = 5
ESTIMATE = 6

_DOUBLES_PER_BLOCK = 4


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return a fresh Generator for the substream identified by (seed, *path)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))


def substream_at(seed: int, *path: int, position: int = 0) -> np.random.Generator:
    """Return the (seed, *path) substream advanced past `position` double draws."""
    if position < 0:
        raise ValueError("position must be >= 0")
    gen = substream(seed, *path)
    blocks, rem = divmod(position, _DOUBLES_PER_BLOCK)
    if blocks:
        gen.bit_generator.advance(blocks)
    if rem:
        gen.random(rem)
    return gen
