"""Deterministic seed derivation for independent rng streams."""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map a (seed, label, ...) tuple to a stable 32-bit stream seed."""
    entropy = [
        zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p)
        for p in parts
    ]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
