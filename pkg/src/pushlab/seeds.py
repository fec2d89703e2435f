"""Deterministic seed derivation.

A single master seed fans out to named sub-streams through blake2b so every
stage (collection, training, evaluation, each interaction) gets its own
reproducible generator, independent of execution order or parallelism.
"""

import hashlib

import numpy as np


def derive_seed(master, *labels):
    """Hash (master, labels...) to a uint64 sub-seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def rng_for(master, *labels):
    """Generator for the named sub-stream of a master seed."""
    return np.random.default_rng(derive_seed(master, *labels))
