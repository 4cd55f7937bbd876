"""Seed derivation and the counter-based generator used inside compiled loops.

Seeds are derived by hashing ``(master, *labels)`` with BLAKE2b (scheme id
``blake2b-64/v1``). Compiled kernels use SplitMix64: the k-th output of stream
``s`` is ``mix64(s + k * GOLDEN)``, so a stream is fully determined by its seed.
Python-side samplers use ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

import hashlib
import threading

import numba as nb
import numpy as np

from .errors import SeedCollision

SEED_SCHEME = "blake2b-64/v1"
GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def derive_seed(master, *labels) -> int:
    h = hashlib.blake2b(digest_size=8, person=b"blanketlab")
    h.update(repr(int(master)).encode())
    for lab in labels:
        h.update(b"\x1f")
        h.update(repr(lab).encode())
    return int.from_bytes(h.digest(), "little")


class SeedRegistry:
    """Derives seeds and counts collisions across a run."""

    def __init__(self, master, strict=True):
        self.master = int(master)
        self.strict = strict
        self._seen = {}
        self.collisions = 0
        self._lock = threading.Lock()

    def __call__(self, *labels) -> int:
        s = derive_seed(self.master, *labels)
        with self._lock:
            prev = self._seen.setdefault(s, labels)
            if prev != labels:
                self.collisions += 1
                if self.strict:
                    raise SeedCollision(f"labels {prev} and {labels} share seed {s}")
        return s

    def __len__(self):
        return len(self._seen)


def generator(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def next_u64(state):
    """Advance ``state`` (a 1-element uint64 array) and return 64 random bits."""
    state[0] += GOLDEN
    return mix64(state[0])


@nb.njit(inline="always")
def next_double(state):
    return np.float64(next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(inline="always")
def next_below(state, k):
    # Lemire-free modulo reduction is biased by < k / 2**64, negligible here
    return np.int64(next_u64(state) % np.uint64(k))


def make_state(seed):
    return np.array([int(seed) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
