"""
src/mitigations.py — mechanism interface + None / BlockHammer / PARA implementations.

The simulator never calls mitigation internals directly: it feeds events
through mechanism_step() and obeys the returned MechanismVerdict.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .config import Config
from .filters import ExactDualCounter
from .rowblocker import RowBlockerState, Verdict
from .throttler import AttackThrottler, ThrottleMode, ThrottlerConfig

log = logging.getLogger(__name__)

MECHANISMS = ("none", "blockhammer", "para")


# ── Events ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RequestAdmission:
    thread: int
    bank: int
    in_flight: int
    now: int


@dataclass(frozen=True)
class ActIssueAttempt:
    thread: int
    bank: int
    row: int
    now: int


@dataclass(frozen=True)
class ActIssued:
    thread: int
    bank: int
    row: int
    now: int


@dataclass(frozen=True)
class RowClose:
    bank: int
    row: int
    now: int


@dataclass(frozen=True)
class EpochTick:
    now: int


@dataclass(frozen=True)
class RefreshCommand:
    bank: int
    row: int


@dataclass(frozen=True)
class MechanismVerdict:
    admit_request: bool = True
    act_safe: bool = True
    side_effects: Tuple[RefreshCommand, ...] = ()
    blocked_by: Optional[str] = None      # "rowblocker" | "throttle"
    retry_at: Optional[int] = None        # earliest time the block can lift
    false_positive: bool = False          # blocked, yet the true count is below n_bl
    would_block: bool = False             # observe mode: unsafe but not enforced


PASS = MechanismVerdict()


class Mechanism:
    """Pass-through baseline. Subclasses override the handlers they care about."""

    name = "none"
    epoch_len: Optional[int] = None

    def __init__(self):
        self._handlers: Dict[type, Callable[[Any], MechanismVerdict]] = {
            RequestAdmission: self.on_admission,
            ActIssueAttempt: self.on_issue_attempt,
            ActIssued: self.on_issued,
            RowClose: self.on_row_close,
            EpochTick: self.on_epoch_tick,
        }

    def step(self, event) -> MechanismVerdict:
        try:
            handler = self._handlers[type(event)]
        except KeyError:
            raise TypeError(f"unknown mechanism event {event!r}") from None
        return handler(event)

    def on_admission(self, ev: RequestAdmission) -> MechanismVerdict:
        return PASS

    def on_issue_attempt(self, ev: ActIssueAttempt) -> MechanismVerdict:
        return PASS

    def on_issued(self, ev: ActIssued) -> MechanismVerdict:
        return PASS

    def on_row_close(self, ev: RowClose) -> MechanismVerdict:
        return PASS

    def on_epoch_tick(self, ev: EpochTick) -> MechanismVerdict:
        return PASS

    def rhli_matrix(self) -> Optional[List[List[float]]]:
        return None

    def rhli_peak(self) -> Optional[List[List[float]]]:
        return None


NoMitigation = Mechanism


def mechanism_step(mechanism: Mechanism, event) -> MechanismVerdict:
    return mechanism.step(event)


# ── BlockHammer ───────────────────────────────────────────────────────────────

class BlockHammer(Mechanism):
    name = "blockhammer"

    def __init__(self, cfg: Config, mode: ThrottleMode = ThrottleMode.FULL,
                 rng: Optional[np.random.Generator] = None, *, throttling: bool = True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mode = mode
        self.throttling = throttling          # False: RowBlocker alone, RHLI still tracked
        self.epoch_len = cfg.derived.epoch_len
        self.n_bl = cfg.derived.n_bl
        self.rowblocker = RowBlockerState(cfg, rng)
        self.throttler = AttackThrottler(ThrottlerConfig(cfg.params.quota_max, mode), cfg.derived,
                                         cfg.timings.threads, cfg.timings.banks_per_rank)
        self.shadow = [ExactDualCounter() for _ in range(cfg.timings.banks_per_rank)]

    @property
    def enforcing(self) -> bool:
        return self.mode is ThrottleMode.FULL

    def on_admission(self, ev: RequestAdmission) -> MechanismVerdict:
        if not (self.enforcing and self.throttling) or ev.in_flight < self.throttler.quota(ev.thread, ev.bank):
            return PASS
        return MechanismVerdict(admit_request=False, blocked_by="throttle")

    def on_issue_attempt(self, ev: ActIssueAttempt) -> MechanismVerdict:
        rb = self.rowblocker
        if rb.is_act_safe(ev.bank, ev.row, ev.now) is Verdict.UNSAFE:
            fp = self.shadow[ev.bank].count(ev.row) < self.n_bl
            if not self.enforcing:
                return MechanismVerdict(would_block=True, false_positive=fp)
            return MechanismVerdict(act_safe=False, blocked_by="rowblocker",
                                    retry_at=rb.safe_at(ev.bank, ev.row, ev.now), false_positive=fp)
        # a fully throttled thread may not push its RHLI past 1
        if (self.enforcing and self.throttling and self.throttler.exhausted(ev.thread, ev.bank)
                and rb.is_blacklisted(ev.bank, ev.row)):
            return MechanismVerdict(act_safe=False, blocked_by="throttle")
        return PASS

    def on_issued(self, ev: ActIssued) -> MechanismVerdict:
        if self.rowblocker.is_blacklisted(ev.bank, ev.row):
            self.throttler.record_blacklisted_act(ev.thread, ev.bank)
        self.rowblocker.on_activate(ev.bank, ev.row, ev.now)
        self.shadow[ev.bank].insert(ev.row)
        return PASS

    def on_epoch_tick(self, ev: EpochTick) -> MechanismVerdict:
        for bank in self.rowblocker.on_epoch_tick(ev.now):
            self.throttler.on_clear(bank)
            self.shadow[bank].clear_and_swap()
        return PASS

    def rhli_matrix(self) -> Optional[List[List[float]]]:
        return self.throttler.rhli_matrix()

    def rhli_peak(self) -> Optional[List[List[float]]]:
        return [[round(float(v), 6) for v in row] for row in self.throttler.peak]


# ── PARA ──────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ParaConfig:
    p: float
    failure_target: float = 1e-15
    rng_seed: int = 0
    rows_per_bank: int = 65536

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"PARA probability must lie in [0, 1] (got {self.p})")


def para_probability(n_rh_star: int, failure_target: float) -> float:
    """1 - target^(1/n): per-activation refresh probability meeting the failure target."""
    if not 0 < failure_target < 1:
        raise ValueError("failure_target must lie in (0, 1)")
    if n_rh_star < 1:
        raise ValueError("n_rh_star must be >= 1")
    return -math.expm1(math.log(failure_target) / n_rh_star)


def para_on_row_close(cfg: ParaConfig, bank: int, row: int,
                      rng: np.random.Generator) -> Optional[RefreshCommand]:
    if rng.random() >= cfg.p:
        return None
    neighbors = [r for r in (row - 1, row + 1) if 0 <= r < cfg.rows_per_bank]
    return RefreshCommand(bank, neighbors[int(rng.integers(len(neighbors)))])


def para_failure_frequency(p: float, n_rh_star: int, trials: int, rng: np.random.Generator,
                           rows_per_bank: int = 65536, victim: int = 100) -> float:
    """
    Monte-Carlo estimate of the chance that `victim` is never refreshed while
    its two neighbors are closed n_rh_star times in alternation, each close
    going through para_on_row_close with probability p.
    """
    if not 1 <= victim < rows_per_bank - 1:
        raise ValueError(f"victim row {victim} needs two neighbors in a {rows_per_bank}-row bank")
    cfg = ParaConfig(p, rows_per_bank=rows_per_bank)
    aggressors = (victim - 1, victim + 1)
    failures = 0
    for _ in range(trials):
        for i in range(n_rh_star):
            refresh = para_on_row_close(cfg, 0, aggressors[i % 2], rng)
            if refresh is not None and refresh.row == victim:
                break
        else:
            failures += 1
    return failures / trials


class Para(Mechanism):
    name = "para"

    def __init__(self, cfg: ParaConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)

    def on_row_close(self, ev: RowClose) -> MechanismVerdict:
        refresh = para_on_row_close(self.cfg, ev.bank, ev.row, self.rng)
        return MechanismVerdict(side_effects=(refresh,)) if refresh else PASS


def make_mechanism(name: str, cfg: Config, mode: str = "full", seed: int = 0) -> Mechanism:
    rng = np.random.default_rng(seed)
    if name == "none":
        return NoMitigation()
    if name == "blockhammer":
        return BlockHammer(cfg, ThrottleMode(mode), rng)
    if name == "para":
        per_victim = para_probability(cfg.derived.n_rh_star, cfg.para_failure_target)
        # each refresh lands on one of two neighbors
        p = min(1.0, 2 * per_victim)
        para_cfg = ParaConfig(p, cfg.para_failure_target, seed, cfg.timings.rows_per_bank)
        log.info("PARA refresh probability %.6g, %.6g per victim (n_rh_star=%d, target=%g)",
                 p, per_victim, cfg.derived.n_rh_star, cfg.para_failure_target)
        return Para(para_cfg, rng)
    raise ValueError(f"unknown mechanism {name!r} (expected one of {', '.join(MECHANISMS)})")
