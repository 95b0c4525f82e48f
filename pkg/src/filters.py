"""
src/filters.py — H3 hashing, counting Bloom filters and the dual (time-interleaved) CBF.

  - H3HashSet: hardwired right-shift of the row address XOR an H3 product
    of the row bits with a random seed matrix, masked to the counter range
  - CountingBloomFilter: saturating numpy counter array, min-of-counters test
  - DualCountingBloomFilter: two CBFs, both fed on insert, only the active one
    tested, cleared + reseeded alternately every epoch
  - ExactDualCounter: exact per-row shadow of the D-CBF lifetimes (no aliasing)
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)


class RowHasher(Protocol):
    def indices(self, row: int) -> Sequence[int]: ...

    def reseed(self, rng: np.random.Generator) -> "RowHasher": ...


def default_shifts(hash_count: int, row_bits: int) -> Tuple[int, ...]:
    """(0, 4, 8, 12) for 4 functions over a 16-bit row address, scaled otherwise."""
    return tuple((j * row_bits) // hash_count for j in range(hash_count))


def _row_bits(rows_per_bank: int) -> int:
    return max(1, (rows_per_bank - 1).bit_length())


@dataclass(frozen=True)
class H3HashSet:
    seeds: Tuple[int, ...]
    shifts: Tuple[int, ...]
    index_mask: int
    row_bits: int = 16

    def __post_init__(self):
        if len(self.seeds) != len(self.shifts):
            raise ValueError("one shift per seed is required")
        # seed_j viewed as row_bits words of index width: the H3 matrix of hash j
        width = self.index_mask.bit_length()
        words = tuple(
            tuple((seed >> (i * width)) & self.index_mask for i in range(self.row_bits))
            for seed in self.seeds
        )
        object.__setattr__(self, "_words", words)

    @classmethod
    def random(cls, hash_count: int, cbf_counters: int, rows_per_bank: int,
               rng: np.random.Generator) -> "H3HashSet":
        row_bits = _row_bits(rows_per_bank)
        mask = cbf_counters - 1
        return cls(
            seeds=_draw_seeds(hash_count, row_bits * mask.bit_length(), rng),
            shifts=default_shifts(hash_count, row_bits),
            index_mask=mask,
            row_bits=row_bits,
        )

    def indices(self, row: int) -> List[int]:
        out = []
        for shift, words in zip(self.shifts, self._words):
            h = row >> shift
            bits = row
            i = 0
            while bits:
                if bits & 1:
                    h ^= words[i]
                bits >>= 1
                i += 1
            out.append(h & self.index_mask)
        return out

    def reseed(self, rng: np.random.Generator) -> "H3HashSet":
        width = self.row_bits * self.index_mask.bit_length()
        return H3HashSet(_draw_seeds(len(self.seeds), width, rng), self.shifts,
                         self.index_mask, self.row_bits)


def _draw_seeds(count: int, width: int, rng: np.random.Generator) -> Tuple[int, ...]:
    nbytes = (width + 7) // 8
    mask = (1 << width) - 1
    return tuple(int.from_bytes(rng.bytes(nbytes), "little") & mask for _ in range(count))


def hash_indices(h: RowHasher, row_id: int) -> List[int]:
    return list(h.indices(row_id))


class CountingBloomFilter:
    """Counter array instead of a bit array; test() never under-reports."""

    def __init__(self, size: int, hashes: RowHasher, saturation: int):
        self.counters = np.zeros(size, dtype=np.uint32)
        self.hashes = hashes
        self.saturation = saturation

    def _slots(self, row: int) -> np.ndarray:
        return np.unique(np.asarray(hash_indices(self.hashes, row), dtype=np.int64))

    def insert(self, row: int) -> None:
        idx = self._slots(row)
        self.counters[idx] = np.minimum(self.counters[idx] + 1, self.saturation)

    def test(self, row: int) -> int:
        return int(self.counters[self._slots(row)].min())

    def clear(self, rng: Optional[np.random.Generator] = None) -> None:
        self.counters.fill(0)
        if rng is not None:
            self.hashes = self.hashes.reseed(rng)


class DualCountingBloomFilter:
    """
    Two CBFs with active/passive roles. Every insert goes to both; the active
    one answers. At each epoch boundary the active filter is cleared and
    reseeded, then the roles swap, so the new active filter already holds one
    epoch of history.
    """

    def __init__(self, filter_a: CountingBloomFilter, filter_b: CountingBloomFilter, n_bl: int):
        self.filters = (filter_a, filter_b)
        self.active = 0
        self.last_clear = 0
        self.n_bl = n_bl

    @classmethod
    def build(cls, size: int, hash_count: int, rows_per_bank: int, n_bl: int,
              rng: np.random.Generator) -> "DualCountingBloomFilter":
        def one() -> CountingBloomFilter:
            return CountingBloomFilter(size, H3HashSet.random(hash_count, size, rows_per_bank, rng), n_bl)
        return cls(one(), one(), n_bl)

    @property
    def filter_a(self) -> CountingBloomFilter:
        return self.filters[0]

    @property
    def filter_b(self) -> CountingBloomFilter:
        return self.filters[1]

    @property
    def active_filter(self) -> CountingBloomFilter:
        return self.filters[self.active]

    @property
    def passive_filter(self) -> CountingBloomFilter:
        return self.filters[1 - self.active]

    def insert(self, row: int) -> None:
        for f in self.filters:
            f.insert(row)

    def test(self, row: int) -> int:
        return self.active_filter.test(row)

    def is_blacklisted(self, row: int) -> bool:
        return self.test(row) >= self.n_bl

    def clear_and_swap(self, now: int, rng: Optional[np.random.Generator] = None) -> None:
        self.active_filter.clear(rng)
        self.active = 1 - self.active
        self.last_clear = now


class ExactDualCounter:
    """Alias-free mirror of a D-CBF: true per-row counts per filter lifetime."""

    def __init__(self):
        self.counts = (Counter(), Counter())
        self.active = 0

    def insert(self, row: int) -> None:
        for c in self.counts:
            c[row] += 1

    def count(self, row: int) -> int:
        return self.counts[self.active][row]

    def clear_and_swap(self) -> None:
        self.counts[self.active].clear()
        self.active = 1 - self.active
