"""
src/oracle.py — exact sliding-window safety oracle.

  - max_window_count: two-pointer maximum over every half-open window [t, t + w)
  - SafetyOracle: per-row running maximum, memory bounded to one window of history
  - VictimExposure: c_k-weighted disturbance per victim row, reset by refreshes
"""

import logging
from collections import defaultdict, deque
from fractions import Fraction
from typing import Deque, Dict, Iterable, List, Sequence, Tuple

log = logging.getLogger(__name__)

RowKey = Tuple[int, int]


def max_window_count(stamps: Sequence[int], window: int) -> int:
    """Largest number of sorted stamps inside any half-open window of length `window`."""
    best = 0
    lo = 0
    for hi, t in enumerate(stamps):
        while t - stamps[lo] >= window:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


class SafetyOracle:
    """Counts every demand activation per row over sliding t_refw windows."""

    def __init__(self, window: int, bound: int):
        self.window = window
        self.bound = bound
        self._recent: Dict[RowKey, Deque[int]] = defaultdict(deque)
        self.max_counts: Dict[RowKey, int] = {}

    def record(self, bank: int, row: int, now: int) -> None:
        recent = self._recent[(bank, row)]
        while recent and now - recent[0] >= self.window:
            recent.popleft()
        recent.append(now)
        if len(recent) > self.max_counts.get((bank, row), 0):
            self.max_counts[(bank, row)] = len(recent)

    def max_window(self, bank: int, row: int) -> int:
        return self.max_counts.get((bank, row), 0)

    @property
    def worst(self) -> int:
        return max(self.max_counts.values(), default=0)

    def violations(self) -> List[Tuple[RowKey, int]]:
        return sorted((k, c) for k, c in self.max_counts.items() if c > self.bound)


def oracle_max_window(oracle: SafetyOracle, bank: int, row: int) -> int:
    return oracle.max_window(bank, row)


class VictimExposure:
    """
    Weighted disturbance each victim accumulates from aggressors within the
    blast radius: sum of c_k over activations at distance k in the window.
    A refresh of the victim (PARA) wipes its exposure.
    """

    def __init__(self, window: int, impact_factors: Iterable[Fraction], rows_per_bank: int):
        self.window = window
        self.weights = [float(c) for c in impact_factors]   # dyadic c_k stay exact
        self.rows_per_bank = rows_per_bank
        self._events: Dict[RowKey, Deque[Tuple[int, float]]] = defaultdict(deque)
        self._sums: Dict[RowKey, float] = defaultdict(float)
        self.max_exposure: Dict[RowKey, float] = {}

    def record(self, bank: int, row: int, now: int) -> None:
        for k, c in enumerate(self.weights, start=1):
            for victim in (row - k, row + k):
                if 0 <= victim < self.rows_per_bank:
                    self._add((bank, victim), now, c)

    def _add(self, victim: RowKey, now: int, weight: float) -> None:
        events = self._events[victim]
        total = self._sums[victim]
        while events and now - events[0][0] >= self.window:
            total -= events.popleft()[1]
        events.append((now, weight))
        total += weight
        self._sums[victim] = total
        if total > self.max_exposure.get(victim, 0):
            self.max_exposure[victim] = total

    def refresh(self, bank: int, row: int) -> None:
        self._events.pop((bank, row), None)
        self._sums.pop((bank, row), None)

    @property
    def worst(self) -> float:
        return max(self.max_exposure.values(), default=0.0)
