"""Stable seed derivation from mixed str/int keys.

Python's builtin hash() is salted per process, so seed chains are derived
from SHA-256 instead; identical keys give identical generators on any run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def seed_sequence(*parts: object) -> np.random.SeedSequence:
    digest = hashlib.sha256("|".join(map(str, parts)).encode("utf-8")).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))


def rng_for(*parts: object) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(*parts))
