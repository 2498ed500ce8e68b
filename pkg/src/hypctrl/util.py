"""Shared numeric defaults, seed fan-out, and thread budget."""
from __future__ import annotations

import hashlib
import os

import numpy as np

# Relative tolerance for identities that hold exactly in real arithmetic
# (inversion round-trips, cocycle splits).  Configurable per call site.
DEFAULT_TOL = 1e-10


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-module RNG: one global seed fans out by stream name."""
    digest = hashlib.sha256(name.encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))


def thread_count() -> int:
    """Parallelism cap from HYPCTRL_THREADS (>= 1); defaults to 1."""
    raw = os.environ.get("HYPCTRL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
