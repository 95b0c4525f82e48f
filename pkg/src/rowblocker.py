"""
src/rowblocker.py — RowBlocker: per-bank blacklist (D-CBF) + per-rank activation history.

An ACT is unsafe iff its row is blacklisted AND was activated less than
t_delay ago. Queries never mutate state; on_activate / expire / on_epoch_tick do.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import Config
from .filters import DualCountingBloomFilter

log = logging.getLogger(__name__)

RowKey = Tuple[int, int]   # (bank, row): unique within the rank


class Verdict(Enum):
    SAFE = "Safe"
    UNSAFE = "Unsafe"


class HistoryOverflowError(RuntimeError):
    """More live entries than the capacity formula allows: a timing-model bug."""


@dataclass
class HistoryEntry:
    row: RowKey
    stamp: int
    valid: bool = True


class HistoryBuffer:
    """Circular queue of recent activations, oldest at head, youngest at tail."""

    def __init__(self, capacity: int, t_delay: int):
        self.capacity = capacity
        self.t_delay = t_delay
        self.entries: List[Optional[HistoryEntry]] = [None] * capacity
        self.head = 0
        self.tail = 0
        self.size = 0
        # latest live stamp per row, so lookups are O(1) instead of a CAM scan
        self._latest: Dict[RowKey, int] = {}

    def __len__(self) -> int:
        return self.size

    def insert(self, row: RowKey, now: int) -> None:
        if self.size == self.capacity:
            raise HistoryOverflowError(
                f"history buffer full ({self.capacity} entries) at t={now} ps"
            )
        self.entries[self.tail] = HistoryEntry(row, now)
        self.tail = (self.tail + 1) % self.capacity
        self.size += 1
        self._latest[row] = now

    def expire(self, now: int) -> None:
        while self.size:
            entry = self.entries[self.head]
            if now - entry.stamp < self.t_delay:
                break
            entry.valid = False
            if self._latest.get(entry.row) == entry.stamp:
                del self._latest[entry.row]
            self.head = (self.head + 1) % self.capacity
            self.size -= 1

    def last_stamp(self, row: RowKey, now: int) -> Optional[int]:
        """Stamp of the row's latest activation younger than t_delay, if any."""
        stamp = self._latest.get(row)
        if stamp is None or now - stamp >= self.t_delay:
            return None
        return stamp

    def recently_activated(self, row: RowKey, now: int) -> bool:
        return self.last_stamp(row, now) is not None

    def live_entries(self) -> List[HistoryEntry]:
        return [self.entries[(self.head + i) % self.capacity] for i in range(self.size)]


class RowBlockerState:
    def __init__(self, cfg: Config, rng: np.random.Generator):
        p, d = cfg.params, cfg.derived
        self.derived = d
        self.rng = rng
        self.filters = [
            DualCountingBloomFilter.build(p.cbf_counters, p.hash_count, cfg.timings.rows_per_bank,
                                          d.counter_saturation, rng)
            for _ in range(cfg.timings.banks_per_rank)
        ]
        self.history = HistoryBuffer(d.history_capacity, d.t_delay)

    # ── Queries ───────────────────────────────────────────────────────────────

    def is_blacklisted(self, bank: int, row: int) -> bool:
        return self.filters[bank].is_blacklisted(row)

    def is_act_safe(self, bank: int, row: int, now: int) -> Verdict:
        if self.is_blacklisted(bank, row) and self.history.recently_activated((bank, row), now):
            return Verdict.UNSAFE
        return Verdict.SAFE

    def safe_at(self, bank: int, row: int, now: int) -> int:
        """Earliest time the delay on (bank, row) is satisfied (now if already safe)."""
        stamp = self.history.last_stamp((bank, row), now)
        if stamp is None or not self.is_blacklisted(bank, row):
            return now
        return stamp + self.derived.t_delay

    # ── Updates ───────────────────────────────────────────────────────────────

    def on_activate(self, bank: int, row: int, now: int) -> None:
        self.history.expire(now)
        self.filters[bank].insert(row)
        self.history.insert((bank, row), now)

    def due_banks(self, now: int) -> List[int]:
        return [b for b, f in enumerate(self.filters) if now - f.last_clear >= self.derived.epoch_len]

    def on_epoch_tick(self, now: int) -> List[int]:
        """Clear + swap every due D-CBF. Returns the banks that were cleared."""
        cleared = self.due_banks(now)
        for b in cleared:
            self.filters[b].clear_and_swap(now, self.rng)
        if cleared:
            log.debug("Epoch tick at %d ps: cleared %d D-CBFs", now, len(cleared))
        self.history.expire(now)
        return cleared
