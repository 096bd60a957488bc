"""Seeded substreams.

Every random draw in the package comes from a generator derived from an
integer key path, so results do not depend on call order or scheduling.
"""
import zlib

import numpy as np

# stream identifiers
SYNTH_COEF = 1
SYNTH_FEATURES = 2
SYNTH_LABELS = 3
AUGMENT = 4
SPLIT = 5
TRAIN_INIT = 6
TRAIN_SHUFFLE = 7
TRAIN_BATCHES = 8
BASELINE = 9
EXPLAIN = 10
PERTURB = 11
RANDOM_ORDER = 12
SWEEP = 13


def _as_int(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError("seed keys must be non-negative")
    return key


def substream(*keys) -> np.random.Generator:
    """Generator for the key path ``keys`` (ints or strings)."""
    return np.random.default_rng(np.random.SeedSequence([_as_int(k) for k in keys]))


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([_as_int(k) for k in keys]).generate_state(1, dtype=np.uint32)[0])
