"""
src/simcore.py — trace-driven, event-ordered memory-controller simulation (one rank).

Timing model (all integer picoseconds):
  - per bank: ACT-to-ACT >= t_rc; open-row policy, a conflict closes then opens
  - per rank: at most 4 ACTs in any t_faw window, ACT-to-ACT >= ceil(t_faw / 4)
  - per rank: one column access per T_CCD on the data bus
  - PARA refreshes are activation-equivalents (t_rc, FAW) that leave the bank closed

Scheduling is FR-FCFS: ready row hits first, then the oldest ready ACT whose
mechanism verdict is safe. Unsafe candidates are skipped, never stalled behind.
"""

import logging
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional, Sequence, Set, Tuple

from .config import Config
from .metrics import Command, SimMetrics
from .mitigations import (
    ActIssueAttempt, ActIssued, EpochTick, Mechanism, MechanismVerdict,
    RefreshCommand, RequestAdmission, RowClose,
)
from .oracle import SafetyOracle, VictimExposure

log = logging.getLogger(__name__)

T_CCD = 5_000   # ps between column accesses on the rank data bus


class SimulationError(RuntimeError):
    """The event loop reached a state it cannot make progress from."""


class TimingViolationError(RuntimeError):
    """A command log breaks t_rc or t_faw."""


@dataclass(frozen=True)
class MemRequest:
    thread: int
    bank: int
    row: int
    ready_at: int
    seq: int = 0


@dataclass
class BankState:
    open_row: Optional[int] = None
    last_act: Optional[int] = None
    busy_until: int = 0            # earliest next ACT (last_act + t_rc)


class FawWindow:
    """Ring of the rank's last four ACT timestamps."""

    def __init__(self, t_faw: int):
        self.t_faw = t_faw
        self.spacing = -(-t_faw // 4)
        self.last_four_acts: Deque[int] = deque(maxlen=4)

    def ready_at(self) -> int:
        if not self.last_four_acts:
            return 0
        t = self.last_four_acts[-1] + self.spacing
        if len(self.last_four_acts) == 4:
            t = max(t, self.last_four_acts[0] + self.t_faw)
        return t

    def record(self, now: int) -> None:
        self.last_four_acts.append(now)


class BankQueue:
    """Admitted requests of one bank, grouped per row in arrival order."""

    def __init__(self):
        self.rows: Dict[int, Deque[MemRequest]] = {}
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, req: MemRequest) -> None:
        self.rows.setdefault(req.row, deque()).append(req)
        self.size += 1

    def head(self, row: int) -> Optional[MemRequest]:
        q = self.rows.get(row)
        return q[0] if q else None

    def heads(self) -> List[MemRequest]:
        """Oldest request of every queued row, oldest first."""
        return sorted((q[0] for q in self.rows.values()), key=lambda r: r.seq)

    def pop(self, row: int) -> MemRequest:
        q = self.rows[row]
        req = q.popleft()
        if not q:
            del self.rows[row]
        self.size -= 1
        return req


@dataclass(frozen=True)
class Issue:
    kind: str                       # "HIT" | "ACT" | "REF"
    bank: int
    request: Optional[MemRequest] = None
    refresh: Optional[RefreshCommand] = None


BlockedHook = Callable[[MemRequest, MechanismVerdict], None]


def schedule_next(queues: Sequence[BankQueue], banks: Sequence[BankState], faw: FawWindow,
                  mechanism: Mechanism, now: int, *, bus_free: int = 0,
                  refreshes: Optional[Sequence[Deque[RefreshCommand]]] = None,
                  on_blocked: Optional[BlockedHook] = None) -> Optional[Issue]:
    """Pick the next command to issue at `now`, or None if nothing is ready."""
    act_ready = faw.ready_at() <= now
    bus_ready = bus_free <= now

    # ── 1. pending neighbor refreshes take the next ACT slot of their bank
    if refreshes is not None and act_ready:
        for b, pending in enumerate(refreshes):
            if pending and banks[b].busy_until <= now:
                return Issue("REF", b, refresh=pending[0])

    if not bus_ready:
        return None

    # ── 2. row-buffer hits, oldest first
    best_hit: Optional[MemRequest] = None
    for b, q in enumerate(queues):
        row = banks[b].open_row
        if row is None or not q:
            continue
        req = q.head(row)
        if req is not None and (best_hit is None or req.seq < best_hit.seq):
            best_hit = req
    if best_hit is not None:
        return Issue("HIT", best_hit.bank, request=best_hit)

    # ── 3. oldest safe activation
    if not act_ready:
        return None
    best_act: Optional[MemRequest] = None
    for b, q in enumerate(queues):
        if not q or banks[b].busy_until > now:
            continue
        for req in q.heads():
            if req.row == banks[b].open_row:
                continue
            if best_act is not None and req.seq > best_act.seq:
                break
            verdict = mechanism.step(ActIssueAttempt(req.thread, b, req.row, now))
            if verdict.act_safe:
                if verdict.would_block and on_blocked is not None:
                    on_blocked(req, verdict)
                best_act = req
                break
            if on_blocked is not None:
                on_blocked(req, verdict)
    if best_act is not None:
        return Issue("ACT", best_act.bank, request=best_act)
    return None


class Simulator:
    def __init__(self, cfg: Config, mechanism: Mechanism, *, horizon: Optional[int] = None,
                 seed: int = 0):
        t = cfg.timings
        self.cfg = cfg
        self.mechanism = mechanism
        self.horizon = horizon
        self.t_rc = t.t_rc
        self.banks = [BankState() for _ in range(t.banks_per_rank)]
        self.queues = [BankQueue() for _ in range(t.banks_per_rank)]
        self.refreshes: List[Deque[RefreshCommand]] = [deque() for _ in range(t.banks_per_rank)]
        self.faw = FawWindow(t.t_faw)
        self.bus_free = 0
        self.oracle = SafetyOracle(t.t_refw, cfg.derived.lifetime_bound)
        self.exposure = VictimExposure(t.t_refw, cfg.params.blast.impact_factors, t.rows_per_bank)
        self.metrics = SimMetrics(mechanism=mechanism.name, seed=seed,
                                  window_bound=cfg.derived.lifetime_bound)
        # per-request blocking bookkeeping, keyed by seq
        self._blocked_since: Dict[int, int] = {}
        self._blocked_release: Dict[int, int] = {}
        self._observed: Set[int] = set()
        self._throttled: Set[int] = set()
        self._retry: List[int] = []

    # ── Blocking bookkeeping ──────────────────────────────────────────────────

    def _on_blocked(self, req: MemRequest, verdict: MechanismVerdict) -> None:
        m = self.metrics
        if verdict.would_block:
            if req.seq not in self._observed:
                self._observed.add(req.seq)
                m.observed_unsafe += 1
            return
        if verdict.blocked_by == "throttle":
            if req.seq not in self._throttled:
                self._throttled.add(req.seq)
                m.throttled_acts += 1
            return
        if verdict.retry_at is not None:
            self._retry.append(verdict.retry_at)
            self._blocked_release.setdefault(req.seq, verdict.retry_at)
        if req.seq not in self._blocked_since:
            self._blocked_since[req.seq] = self._now
            m.blocked_acts += 1
            if verdict.false_positive:
                m.false_positives += 1

    def _serve(self, req: MemRequest, now: int) -> None:
        self.queues[req.bank].pop(req.row)
        self.in_flight[(req.thread, req.bank)] -= 1
        self.bus_free = now + T_CCD
        since = self._blocked_since.pop(req.seq, None)
        if since is not None:
            release = self._blocked_release.pop(req.seq, now)
            self.metrics.blocked_delays.append(min(now, release) - since)
        self.metrics.thread(req.thread).record(now - req.ready_at)
        self.metrics.commands.append(Command(now, "RD", req.bank, req.row, req.thread))

    def _activate(self, bank: int, row: int, now: int, kind: str, thread: int = -1) -> None:
        state = self.banks[bank]
        if state.open_row is not None:
            self._close(bank, now)
        state.last_act = now
        state.busy_until = now + self.t_rc
        self.faw.record(now)
        self.exposure.record(bank, row, now)
        self.metrics.commands.append(Command(now, kind, bank, row, thread))

    def _close(self, bank: int, now: int) -> None:
        state = self.banks[bank]
        closed, state.open_row = state.open_row, None
        verdict = self.mechanism.step(RowClose(bank, closed, now))
        for refresh in verdict.side_effects:
            self.refreshes[refresh.bank].append(refresh)

    def _issue(self, issue: Issue, now: int) -> None:
        m = self.metrics
        if issue.kind == "REF":
            ref = self.refreshes[issue.bank].popleft()
            self._activate(ref.bank, ref.row, now, "REF")
            self.exposure.refresh(ref.bank, ref.row)
            m.refreshes += 1
            return
        req = issue.request
        if issue.kind == "ACT":
            state = self.banks[req.bank]
            if state.open_row is None:
                m.row_misses += 1
            else:
                m.row_conflicts += 1
                self._close(req.bank, now)
            self.mechanism.step(ActIssued(req.thread, req.bank, req.row, now))
            self._activate(req.bank, req.row, now, "ACT", req.thread)
            state.open_row = req.row
            self.oracle.record(req.bank, req.row, now)
            m.activations += 1
        else:
            m.row_hits += 1
        self._serve(req, now)

    # ── Event loop ────────────────────────────────────────────────────────────

    def _tick(self, boundary: int) -> None:
        matrix = self.mechanism.rhli_matrix()
        if matrix is not None:
            self.metrics.rhli_epochs.append({"epoch": len(self.metrics.rhli_epochs), "end_ps": boundary,
                                             "rhli": matrix})
        self.mechanism.step(EpochTick(boundary))

    def _admit(self, now: int) -> None:
        for key, waiting in self.pending.items():
            while waiting:
                req = waiting[0]
                verdict = self.mechanism.step(RequestAdmission(req.thread, req.bank, self.in_flight[key], now))
                if not verdict.admit_request:
                    break
                waiting.popleft()
                self.queues[req.bank].push(req)
                self.in_flight[key] += 1

    def _outstanding(self) -> Tuple[bool, bool]:
        queued = any(self.queues) or any(self.refreshes)
        waiting = any(self.pending.values())
        return queued, waiting

    def _next_wakeup(self, now: int, arrivals: Sequence[MemRequest], idx: int,
                     next_tick: Optional[int]) -> Optional[int]:
        candidates: List[int] = []
        if idx < len(arrivals):
            candidates.append(arrivals[idx].ready_at)
        queued, waiting = self._outstanding()
        if queued:
            candidates.append(self.bus_free)
            candidates.append(self.faw.ready_at())
            candidates.extend(b.busy_until for b, q, r in zip(self.banks, self.queues, self.refreshes) if q or r)
            candidates.extend(self._retry)
        if (queued or waiting) and next_tick is not None:
            candidates.append(next_tick)
        later = [c for c in candidates if c > now]
        return min(later) if later else None

    def run(self, trace: Sequence[MemRequest]) -> SimMetrics:
        arrivals = sorted(trace, key=lambda r: (r.ready_at, r.seq))
        self.metrics.requests = len(arrivals)
        self.pending: Dict[Tuple[int, int], Deque[MemRequest]] = defaultdict(deque)
        self.in_flight: Dict[Tuple[int, int], int] = defaultdict(int)
        epoch_len = self.mechanism.epoch_len
        next_tick = epoch_len if epoch_len else None
        idx = 0
        now = arrivals[0].ready_at if arrivals else 0
        log.info("Simulating %d requests under %s", len(arrivals), self.mechanism.name)

        while True:
            if self.horizon is not None and now >= self.horizon:
                break
            self._now = now
            while next_tick is not None and next_tick <= now:
                self._tick(next_tick)
                next_tick += epoch_len
            while idx < len(arrivals) and arrivals[idx].ready_at <= now:
                req = arrivals[idx]
                self.pending[(req.thread, req.bank)].append(req)
                idx += 1
            self._admit(now)

            self._retry = []
            issue = schedule_next(self.queues, self.banks, self.faw, self.mechanism, now,
                                  bus_free=self.bus_free, refreshes=self.refreshes,
                                  on_blocked=self._on_blocked)
            if issue is not None:
                self._issue(issue, now)
                continue

            wake = self._next_wakeup(now, arrivals, idx, next_tick)
            if wake is None:
                queued, waiting = self._outstanding()
                if queued or waiting:
                    raise SimulationError(f"no progress possible at t={now} ps")
                break
            if self.horizon is not None and wake >= self.horizon:
                break
            now = wake

        return self._finish(now)

    def _finish(self, now: int) -> SimMetrics:
        m = self.metrics
        m.end_time_ps = now
        m.max_window_per_row = dict(self.oracle.max_counts)
        m.max_victim_exposure = self.exposure.worst
        m.rhli_peak = self.mechanism.rhli_peak()
        if self.mechanism.name == "para":
            m.safety_violation = self.exposure.worst >= self.cfg.params.n_rh
        else:
            m.safety_violation = self.oracle.worst > self.oracle.bound
        check_timing(m.commands, self.cfg.timings.t_rc, self.cfg.timings.t_faw)
        log.info("Done at %d ps: served %d/%d, %d ACTs, max window %d (bound %d)",
                 now, m.served, m.requests, m.activations, m.max_window, m.window_bound)
        return m


def run(trace: Sequence[MemRequest], mechanism: Mechanism, config: Config, *,
        horizon: Optional[int] = None, seed: int = 0) -> SimMetrics:
    return Simulator(config, mechanism, horizon=horizon, seed=seed).run(trace)


def check_timing(commands: Sequence[Command], t_rc: int, t_faw: int) -> None:
    """Post-hoc: no two ACTs to one bank within t_rc, no five ACTs within t_faw."""
    acts = [c for c in commands if c.kind in ("ACT", "REF")]
    last: Dict[int, int] = {}
    for c in acts:
        prev = last.get(c.bank)
        if prev is not None and c.time - prev < t_rc:
            raise TimingViolationError(f"bank {c.bank}: ACTs at {prev} and {c.time} ps violate t_rc")
        last[c.bank] = c.time
    for i in range(len(acts) - 4):
        if acts[i + 4].time - acts[i].time < t_faw:
            raise TimingViolationError(f"five ACTs within t_faw starting at {acts[i].time} ps")
