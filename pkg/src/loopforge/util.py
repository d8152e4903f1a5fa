"""Shared plumbing: hashing, atomic file writes, seeded RNG streams."""

from __future__ import annotations

import os
import tempfile

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def digest_file(path) -> str:
    with open(path, "rb") as f:
        return f"{fnv1a64(f.read()):016x}"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename into place.

    A failed run never leaves a partially written artifact at `path`.
    """
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Derive an independent generator from a global seed and a label path.

    Every stage of the pipeline pulls randomness through here, so a single
    config seed makes the whole run reproducible while distinct stages get
    decorrelated streams.
    """
    entropy = [int(seed) & _MASK64]
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            entropy.append(int(lab) & _MASK64)
        else:
            entropy.append(fnv1a64(str(lab).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def worker_count() -> int:
    """Worker cap from LOOPFORGE_THREADS; defaults to 1 (sequential)."""
    raw = os.environ.get("LOOPFORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
