"""Dense ranking of weak compositions.

A recombining lattice node is identified by how often each branch type was taken,
i.e. by a weak composition of the step index ``k`` into ``parts`` nonnegative
counts.  Compositions are ordered lexicographically (ascending) and ranked with
the combinatorial number system, so a layer is a flat array indexed by rank.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np


def count(k: int, parts: int) -> int:
    """Number of weak compositions of ``k`` into ``parts`` parts."""
    return comb(k + parts - 1, parts - 1)


@lru_cache(maxsize=64)
def compositions(k: int, parts: int) -> np.ndarray:
    """All weak compositions of ``k`` into ``parts`` parts, ascending lex order.

    Returns a read-only ``(count(k, parts), parts)`` int64 array.
    """
    if parts < 1 or k < 0:
        raise ValueError("need parts >= 1 and k >= 0")
    if parts == 1:
        out = np.array([[k]], dtype=np.int64)
    else:
        blocks = []
        for first in range(k + 1):
            tail = compositions(k - first, parts - 1)
            head = np.full((tail.shape[0], 1), first, dtype=np.int64)
            blocks.append(np.hstack([head, tail]))
        out = np.vstack(blocks)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _binom_table(top: int, parts: int) -> np.ndarray:
    table = np.zeros((top + 1, parts + 1), dtype=np.int64)
    for a in range(top + 1):
        for b in range(min(a, parts) + 1):
            table[a, b] = comb(a, b)
    return table


def rank(comps: np.ndarray, k: int) -> np.ndarray:
    """Lexicographic rank of each row of ``comps`` among compositions of ``k``."""
    comps = np.atleast_2d(np.asarray(comps, dtype=np.int64))
    parts = comps.shape[1]
    if parts == 1:
        return np.zeros(comps.shape[0], dtype=np.int64)
    table = _binom_table(k + parts, parts)
    out = np.zeros(comps.shape[0], dtype=np.int64)
    remaining = np.full(comps.shape[0], k, dtype=np.int64)
    for i in range(parts - 1):
        q = parts - i
        c = comps[:, i]
        # compositions whose i-th entry is smaller than c, by the hockey-stick identity
        out += table[remaining + q - 1, q - 1] - table[remaining - c + q - 1, q - 1]
        remaining = remaining - c
    return out


@lru_cache(maxsize=64)
def child_index(k: int, parts: int) -> np.ndarray:
    """``out[j, r]`` is the rank at step ``k + 1`` of composition ``r`` plus one count in slot ``j``."""
    comps = compositions(k, parts)
    out = np.empty((parts, comps.shape[0]), dtype=np.int64)
    for j in range(parts):
        bumped = comps.copy()
        bumped[:, j] += 1
        out[j] = rank(bumped, k + 1)
    out.setflags(write=False)
    return out
