"""Hierarchical seed derivation.

``seed_tree(master, "init", 3, "field", 7)`` hashes the master seed and the
label path with BLAKE2b, so a child seed depends only on its own path and
never on how many other seeds were derived first.
"""
from __future__ import annotations

import hashlib

import numpy as np

_DOMAIN = b"hybridens.seed_tree.v1"


def _encode(label) -> bytes:
    if isinstance(label, bool) or not isinstance(label, (int, str, np.integer)):
        raise TypeError(f"seed labels must be str or int, got {type(label).__name__}")
    if isinstance(label, str):
        data = b"s" + label.encode("utf-8")
    else:
        data = b"i" + str(int(label)).encode("ascii")
    return len(data).to_bytes(4, "little") + data


def seed_tree(master: int, *labels) -> int:
    """Deterministic 63-bit child seed for ``(master, *labels)``."""
    if int(master) < 0:
        raise ValueError("master seed must be non-negative")
    h = hashlib.blake2b(digest_size=8, person=b"hybridens")
    h.update(_DOMAIN)
    h.update(int(master).to_bytes(16, "little"))
    for label in labels:
        h.update(_encode(label))
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(seed_tree(master, *labels))
