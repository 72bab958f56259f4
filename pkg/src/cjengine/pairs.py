"""Canonical ordering of unordered ward pairs.

Every pairwise object in the engine (design-matrix rows, difference
covariances, schedule distributions) is indexed by the same linear ordering
of the pairs (i, j), i < j: (0,1), (0,2), ..., (0,N-1), (1,2), ...
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PairIndex:
    """Bijection between unordered pairs of {0..N-1} and linear indices."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 items, got n={self.n}")

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    def index_of(self, i: int, j: int) -> int:
        """Linear index of the pair {i, j} (0-based items)."""
        if i == j:
            raise ValueError("pair members must differ")
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"pair ({i}, {j}) out of range for n={self.n}")
        if i > j:
            i, j = j, i
        # 1-based closed form: M - (N-i+1)(N-i)/2 + j - i, shifted to 0-based.
        return self.n_pairs - (self.n - i) * (self.n - i - 1) // 2 + j - i - 1

    def pair_of(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.n_pairs):
            raise IndexError(f"index {index} out of range")
        i = 0
        block = self.n - 1
        while index >= block:
            index -= block
            i += 1
            block -= 1
        return i, i + index + 1

    def all_pairs(self) -> np.ndarray:
        """(n_pairs, 2) array of pairs in canonical order."""
        rows, cols = np.triu_indices(self.n, k=1)
        return np.column_stack([rows, cols])
