"""Seed fan-out: every stage derives its own stream from one root seed."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    """Stable 63-bit seed for ``root`` and a stage path such as ``("plan", "obj003")``."""
    key = ":".join([str(int(root))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def stage_rng(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
