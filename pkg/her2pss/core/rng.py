"""splitmix64 random stream.

All randomness in the pipeline derives from one user seed through this
generator, so independent implementations can reproduce coordinate
transcripts exactly.

Stream definition (all arithmetic mod 2**64):

    state_i = seed + i * GOLDEN          for i = 1, 2, ...
    out_i   = mix(state_i)

`below(n)` returns `next_u64() % n`; `uniform()` returns
`(next_u64() >> 11) * 2**-53`.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def mix64(state: int) -> int:
    z = state & MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int) -> int:
    """First output of a stream seeded with `seed`."""
    return mix64((seed + GOLDEN) & MASK64)


def derive_seed(seed: int, *parts: int) -> int:
    """Fold integer parts into a seed: h = splitmix64(h + part) for each part."""
    h = seed & MASK64
    for part in parts:
        h = splitmix64((h + part) & MASK64)
    return h


def _mix64_array(states: np.ndarray) -> np.ndarray:
    z = states.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MUL1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MUL2)
        z ^= z >> np.uint64(31)
    return z


class SeededRng:
    """Sequential splitmix64 generator. Not thread-safe; give each task its own."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.state = self.seed

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"below() needs a positive bound, got {n}")
        return self.next_u64() % n

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_block(self, count: int) -> np.ndarray:
        """The next `count` outputs as uint64, identical to `count` next_u64() calls."""
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN)
        self.state = (self.state + count * GOLDEN) & MASK64
        return _mix64_array(states)
