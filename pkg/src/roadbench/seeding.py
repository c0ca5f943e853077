"""Content-keyed deterministic random streams.

Streams are keyed by (seed, text key, counter) through a stable digest, so
any worker can regenerate exactly the draws for its share of the work and
results never depend on scheduling or call order. Python's built-in
hash() is salted per process and must not be used here.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def text_entropy(text: str) -> int:
    digest = hashlib.blake2s(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def keyed_rng(seed: int, text: str, counter: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & _MASK64, text_entropy(text), counter])
    return np.random.default_rng(ss)
