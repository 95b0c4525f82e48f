"""
src/throttler.py — AttackThrottler: per <thread, bank> blacklisted-ACT counters, RHLI and quota.

RHLI = active count / ((t_cbf / t_refw) * n_rh_star - n_bl).
quota = ceil(quota_max * (1 - rhli)) while rhli < 1, else 0.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import List

import numpy as np

from .config import DerivedParams

log = logging.getLogger(__name__)


class ThrottleMode(Enum):
    OBSERVE = "observe"
    FULL = "full"


@dataclass(frozen=True)
class ThrottlerConfig:
    quota_max: int
    mode: ThrottleMode = ThrottleMode.FULL

    def __post_init__(self):
        if self.quota_max < 1:
            raise ValueError("quota_max must be >= 1")


class RhliCounters:
    """Two saturating count matrices (threads x banks), time-interleaved like the D-CBF."""

    def __init__(self, threads: int, banks: int, saturation: int):
        self.counters = np.zeros((2, threads, banks), dtype=np.int64)
        self.active = np.zeros(banks, dtype=np.int64)   # selector per bank
        self.saturation = saturation

    def increment(self, thread: int, bank: int) -> None:
        self.counters[:, thread, bank] = np.minimum(self.counters[:, thread, bank] + 1, self.saturation)

    def active_count(self, thread: int, bank: int) -> int:
        return int(self.counters[self.active[bank], thread, bank])

    def active_matrix(self) -> np.ndarray:
        banks = np.arange(self.counters.shape[2])
        return self.counters[self.active, :, banks].T

    def clear_and_swap(self, bank: int) -> None:
        self.counters[self.active[bank], :, bank] = 0
        self.active[bank] = 1 - self.active[bank]


class AttackThrottler:
    def __init__(self, cfg: ThrottlerConfig, derived: DerivedParams, threads: int, banks: int):
        self.cfg = cfg
        self.denominator: Fraction = derived.throttle_denominator
        self.counters = RhliCounters(threads, banks, derived.throttle_saturation)
        self.peak = np.zeros((threads, banks), dtype=np.float64)

    @property
    def enforcing(self) -> bool:
        return self.cfg.mode is ThrottleMode.FULL

    def record_blacklisted_act(self, thread: int, bank: int) -> None:
        self.counters.increment(thread, bank)
        level = float(self.rhli(thread, bank))
        if level > self.peak[thread, bank]:
            self.peak[thread, bank] = level
        if level >= 1:
            log.debug("Thread %d fully throttled on bank %d (RHLI %.3f)", thread, bank, level)

    def rhli(self, thread: int, bank: int) -> Fraction:
        return self.counters.active_count(thread, bank) / self.denominator

    def exhausted(self, thread: int, bank: int) -> bool:
        return self.rhli(thread, bank) >= 1

    def quota(self, thread: int, bank: int) -> int:
        if not self.enforcing:
            return self.cfg.quota_max
        level = self.rhli(thread, bank)
        if level >= 1:
            return 0
        return math.ceil(self.cfg.quota_max * (1 - level))

    def on_clear(self, bank: int) -> None:
        self.counters.clear_and_swap(bank)

    def rhli_matrix(self) -> List[List[float]]:
        """threads x banks snapshot of the current RHLI values."""
        counts = self.counters.active_matrix()
        denom = float(self.denominator)
        return [[round(float(c) / denom, 6) for c in row] for row in counts]
