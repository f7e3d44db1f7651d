"""Labeled deterministic RNG streams.

Every stochastic choice in the simulator (weight init, shard shuffles,
mini-batch order, group partitions, poison sample selection) draws from a
stream derived from a base seed plus a tuple of string/int labels. The
derivation hashes ``base/label0/label1/...`` with BLAKE2b, so streams are
stable across processes and platforms and two distinct label paths never
collide in practice.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *labels: object) -> int:
    """Derive a 64-bit seed from a base seed and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "big")


def stream(base: int, *labels: object) -> np.random.Generator:
    """A fresh Generator for the (base, labels) stream."""
    return np.random.default_rng(derive_seed(base, *labels))
