"""Addressable random streams.

Every uniform used by a simulation is a pure function of
(master_seed, replication, purpose, position). Each (seed, replication,
purpose) triple owns a Philox counter-based generator; position
``(step - 1) * m + sensor`` is the index of a draw inside that stream, so a
single draw can be recomputed without replaying its predecessors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBSERVATIONS = 0
CHANNEL = 1
BOOTSTRAP = 2

# Philox emits four 64-bit words per counter increment
_WORDS_PER_BLOCK = 4


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    replication: int = 0
    purpose: int = OBSERVATIONS

    def philox_key(self) -> np.ndarray:
        seq = np.random.SeedSequence([self.master_seed, self.replication, self.purpose])
        return seq.generate_state(2, dtype=np.uint64)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.philox_key()))


def uniform_at(key: StreamKey, position: int) -> float:
    """The ``position``-th float64 uniform of the stream, by counter jump."""
    bitgen = np.random.Philox(key=key.philox_key())
    block, offset = divmod(position, _WORDS_PER_BLOCK)
    bitgen.advance(block)
    return float(np.random.Generator(bitgen).random(offset + 1)[-1])


def step_blocks(key: StreamKey, m: int, horizon: int, chunk: int = 256):
    """Yield (first_step, uniforms[rows, m]) blocks covering steps 1..horizon."""
    gen = key.generator()
    step = 1
    while step <= horizon:
        rows = min(chunk, horizon - step + 1)
        yield step, gen.random((rows, m))
        step += rows
