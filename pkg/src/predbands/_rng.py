"""Deterministic randomness for the whole package.

One algorithm everywhere: numpy's Philox 4x64 counter-based bit generator.
Streams for distinct purposes are derived from (seed, *tags), each tag hashed
into a 64-bit word that is appended to the SeedSequence entropy, so component
randomness is reproducible independently of call order or thread scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _tag_word(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    h = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Philox generator for ``seed``, specialized by purpose tags.

    ``stream(7, "dgp", 3)`` and ``stream(7, "permute")`` are statistically
    independent; the same arguments always rebuild the identical stream.
    """
    words = [int(seed) & _MASK64] + [_tag_word(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
