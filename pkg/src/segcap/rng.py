"""Named random substreams derived from a single run seed.

Every source of randomness (init, masking, sampling, dropout, ...) draws
from its own generator keyed by (seed, *tags). Streams for a given key are
identical across processes and platforms, which is what makes seeded runs
and checkpoint resumption bit-reproducible: nothing ever depends on how
much randomness some other component consumed.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_for(seed: int, *tags: object) -> np.random.Generator:
    """Return the generator for the substream named by `tags`.

    Tags may be strings or integers; they are folded into the spawn key via
    CRC32 so the mapping is stable across interpreter runs.
    """
    key = tuple(zlib.crc32(str(t).encode("utf-8")) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
