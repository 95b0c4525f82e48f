"""
src/traces.py — trace file I/O + attack / benign / mixed / fuzz trace generators.

Trace file format: one request per line, `ready_at_ps,thread,bank,row`.
Lines starting with `#` and blank lines are ignored. Request order in the
file is the FCFS order (seq).

Generator specs (the `--gen` flag):
  attack:double_sided | attack:many_sided:<n> | attack:epoch_straddle
  benign:L | benign:M | benign:H
  mixed:<attack>[:<n>][:<L|M|H>]   one attacker (thread 0) + benign threads
  fuzz:<n>                          n-th seeded random adversarial trace
"""

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config
from .oracle import max_window_count
from .simcore import MemRequest

log = logging.getLogger(__name__)

ATTACK_KINDS = ("double_sided", "many_sided", "epoch_straddle")


class TraceParseError(ValueError):
    def __init__(self, message: str, line_no: int = 0):
        super().__init__(f"line {line_no}: {message}" if line_no else message)
        self.line_no = line_no


# ── 1. Trace files ────────────────────────────────────────────────────────────

def parse_trace(path: str, cfg: Optional[Config] = None) -> List[MemRequest]:
    """Read a trace file; with cfg, bank and row ids are range-checked too."""
    trace: List[MemRequest] = []
    last_ready: Dict[int, int] = {}
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                raise TraceParseError("invalid UTF-8", line_no) from None
            if not line or line.startswith("#"):
                continue
            fields = [part.strip() for part in line.split(",")]
            if len(fields) != 4:
                raise TraceParseError(f"expected 4 fields, got {len(fields)}", line_no)
            try:
                ready_at, thread, bank, row = (int(v) for v in fields)
            except ValueError:
                raise TraceParseError(f"non-integer field in {line!r}", line_no) from None
            if min(ready_at, thread, bank, row) < 0:
                raise TraceParseError("fields must be non-negative", line_no)
            if cfg is not None:
                if bank >= cfg.timings.banks_per_rank:
                    raise TraceParseError(f"bank {bank} out of range", line_no)
                if row >= cfg.timings.rows_per_bank:
                    raise TraceParseError(f"row {row} out of range", line_no)
            if ready_at < last_ready.get(thread, 0):
                raise TraceParseError(f"thread {thread} goes back in time", line_no)
            last_ready[thread] = ready_at
            trace.append(MemRequest(thread, bank, row, ready_at, len(trace)))
    log.info("Parsed %d requests from %s", len(trace), path)
    return trace


def write_trace(trace: Sequence[MemRequest], path: str) -> str:
    with open(path, "w") as f:
        f.write("# ready_at_ps,thread,bank,row\n")
        for r in trace:
            f.write(f"{r.ready_at},{r.thread},{r.bank},{r.row}\n")
    log.info("Trace written -> %s (%d requests)", path, len(trace))
    return path


def renumber(trace: Sequence[MemRequest]) -> List[MemRequest]:
    """Sort by (ready_at, thread) and reassign seq in that order."""
    ordered = sorted(trace, key=lambda r: (r.ready_at, r.thread, r.seq))
    return [MemRequest(r.thread, r.bank, r.row, r.ready_at, i) for i, r in enumerate(ordered)]


# ── 2. Attack traces ──────────────────────────────────────────────────────────

def attack_spacing(cfg: Config, n_banks: int = 1) -> int:
    """Fastest request pacing the rank can turn into activations."""
    t = cfg.timings
    return max(-(-t.t_rc // n_banks), -(-t.t_faw // 4))


def aggressor_rows(kind: str, cfg: Config, n: Optional[int] = None,
                   victim: Optional[int] = None) -> List[int]:
    rows_per_bank = cfg.timings.rows_per_bank
    v = rows_per_bank // 2 if victim is None else victim
    if kind in ("double_sided", "epoch_straddle"):
        return [v - 1, v + 1]
    if kind != "many_sided":
        raise ValueError(f"unknown attack kind {kind!r} (expected one of {', '.join(ATTACK_KINDS)})")
    radius = cfg.params.blast.blast_radius
    if n is None or not 2 <= n <= 2 * radius:
        raise ValueError(f"many_sided needs 2 <= n <= 2*blast_radius={2 * radius} (got {n})")
    below = math.ceil(n / 2)
    rows = [v - k for k in range(below, 0, -1)] + [v + k for k in range(1, n - below + 1)]
    if rows[0] < 0 or rows[-1] >= rows_per_bank:
        raise ValueError("aggressor rows fall outside the bank")
    return rows


def gen_attack_trace(kind: str, cfg: Config, *, n: Optional[int] = None,
                     banks: Sequence[int] = (0,), duration: Optional[int] = None,
                     threads: Sequence[int] = (0,), victim: Optional[int] = None) -> List[MemRequest]:
    """
    Maximal-rate hammering: requests round-robin over `banks`, each bank
    cycling through its aggressor rows, paced at the timing limit.
    epoch_straddle first bursts n_bl - 1 activations per row so the burst
    ends just before the first epoch boundary, then continues at full rate.
    Several `threads` take turns issuing, splitting the per-thread RHLI.
    """
    rows = aggressor_rows(kind, cfg, n, victim)
    banks = list(banks)
    duration = cfg.timings.t_refw if duration is None else duration
    spacing = attack_spacing(cfg, len(banks))

    start = 0
    if kind == "epoch_straddle":
        burst = len(rows) * len(banks) * (cfg.derived.n_bl - 1)
        start = max(0, cfg.derived.epoch_len - burst * spacing)

    trace: List[MemRequest] = []
    t = start
    i = 0
    while t < start + duration:
        bank = banks[i % len(banks)]
        row = rows[(i // len(banks)) % len(rows)]
        trace.append(MemRequest(threads[i % len(threads)], bank, row, t, len(trace)))
        t += spacing
        i += 1
    log.debug("%s attack: %d requests over %d bank(s), spacing %d ps", kind, len(trace), len(banks), spacing)
    return trace


# ── 3. Benign traces ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BenignProfile:
    mean_gap: int          # ps, exponential inter-arrival
    locality: float        # chance the next request reuses the previous row
    row_cap: int           # per-row accesses per refresh window (benign envelope)
    working_set: int       # rows per bank the thread draws from
    zipf_s: float = 1.1


# Caps are the 95th / 99th / 100th percentile per-row activation counts of
# benign applications per 64 ms window.
BENIGN_PROFILES: Dict[str, BenignProfile] = {
    "L": BenignProfile(mean_gap=400_000, locality=0.9, row_cap=78, working_set=32),
    "M": BenignProfile(mean_gap=200_000, locality=0.7, row_cap=109, working_set=64),
    "H": BenignProfile(mean_gap=100_000, locality=0.3, row_cap=314, working_set=128),
}


def benign_row_cap(category: str, cfg: Config) -> int:
    """Envelope cap, held to a quarter of the blacklisting threshold for small configs."""
    return max(1, min(BENIGN_PROFILES[category].row_cap, cfg.derived.n_bl // 4))


def gen_benign_trace(category: str, seed: int, cfg: Config, *, thread: int = 0,
                     banks: Optional[Sequence[int]] = None, duration: Optional[int] = None,
                     max_requests: Optional[int] = None) -> List[MemRequest]:
    """
    Synthetic benign thread: Zipf row popularity over a per-thread working set,
    exponential inter-arrivals, and a per-row sliding-window access cap.
    Each thread draws rows from its own slice of every bank.
    """
    try:
        profile = BENIGN_PROFILES[category]
    except KeyError:
        raise ValueError(f"unknown benign category {category!r} (expected L, M or H)") from None
    t = cfg.timings
    rng = np.random.default_rng([seed, thread])
    banks = list(range(t.banks_per_rank)) if banks is None else list(banks)
    duration = t.t_refw if duration is None else duration
    cap = benign_row_cap(category, cfg)

    region = max(1, t.rows_per_bank // t.threads)
    base = (thread % t.threads) * region
    ws = min(profile.working_set, region)
    ranks = np.arange(1, ws + 1, dtype=np.float64)
    popularity = ranks ** -profile.zipf_s
    popularity /= popularity.sum()
    working_rows = {b: base + rng.choice(region, size=ws, replace=False) for b in banks}

    recent: Dict[Tuple[int, int], Deque[int]] = defaultdict(deque)

    def under_cap(key: Tuple[int, int], now: int) -> bool:
        stamps = recent[key]
        while stamps and now - stamps[0] >= t.t_refw:
            stamps.popleft()
        return len(stamps) < cap

    trace: List[MemRequest] = []
    now = 0
    prev: Optional[Tuple[int, int]] = None
    while True:
        now += max(1, int(rng.exponential(profile.mean_gap)))
        if now >= duration or (max_requests is not None and len(trace) >= max_requests):
            break
        if prev is not None and rng.random() < profile.locality and under_cap(prev, now):
            key = prev
        else:
            bank = banks[int(rng.integers(len(banks)))]
            rows = working_rows[bank]
            first = int(rng.choice(ws, p=popularity))
            key = None
            for k in range(ws):
                candidate = (bank, int(rows[(first + k) % ws]))
                if under_cap(candidate, now):
                    key = candidate
                    break
            if key is None:
                continue
        recent[key].append(now)
        trace.append(MemRequest(thread, key[0], key[1], now, len(trace)))
        prev = key
    log.debug("benign:%s thread %d: %d requests, row cap %d", category, thread, len(trace), cap)
    return trace


def max_row_window(trace: Sequence[MemRequest], window: int) -> int:
    """Largest per-row request count in any half-open window (benign envelope check)."""
    stamps: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for r in sorted(trace, key=lambda r: r.ready_at):
        stamps[(r.bank, r.row)].append(r.ready_at)
    return max((max_window_count(s, window) for s in stamps.values()), default=0)


# ── 4. Mixed and fuzz traces ──────────────────────────────────────────────────

def gen_mixed_trace(attack: str, cfg: Config, seed: int, *, n: Optional[int] = None,
                    category: str = "H", duration: Optional[int] = None) -> List[MemRequest]:
    """Attacker on thread 0 hammering every bank inside its own row slice, benign threads on the rest."""
    t = cfg.timings
    banks = range(t.banks_per_rank)
    victim = max(1, t.rows_per_bank // t.threads) // 2
    trace = gen_attack_trace(attack, cfg, n=n, banks=banks, duration=duration, threads=(0,), victim=victim)
    for thread in range(1, t.threads):
        trace += gen_benign_trace(category, seed, cfg, thread=thread, duration=duration)
    return renumber(trace)


def gen_fuzz_trace(cfg: Config, seed: int, index: int = 0, *, requests: int = 200,
                   bank: int = 0, thread: int = 0) -> List[MemRequest]:
    """
    Seeded random adversarial trace on one bank: random row subsets near a
    victim, fast bursts, paced segments, idle gaps, and bursts aligned to end
    on an epoch boundary. One full-rate double-sided run long enough to beat
    the lifetime bound is spliced in at a random segment.
    """
    rng = np.random.default_rng([seed, index])
    d = cfg.derived
    t_rc = cfg.timings.t_rc
    spacing = attack_spacing(cfg)
    victim = cfg.timings.rows_per_bank // 2
    radius = cfg.params.blast.blast_radius
    near = [victim + k for k in range(-radius, radius + 1) if k != 0]

    segments: List[Tuple[str, List[int], int]] = []
    budget = requests
    while budget > 0:
        size = int(rng.integers(4, 40))
        rows = [int(r) for r in rng.choice(near, size=int(rng.integers(1, len(near) + 1)), replace=False)]
        kind = ("burst", "paced", "gap", "boundary")[int(rng.integers(4))]
        segments.append((kind, rows, min(size, budget)))
        budget -= size
    hammer = 2 * (d.lifetime_bound + 1)
    segments.insert(int(rng.integers(len(segments) + 1)), ("burst", [victim - 1, victim + 1], hammer))

    trace: List[MemRequest] = []
    now = 0
    for kind, rows, size in segments:
        if kind == "gap":
            now += int(rng.integers(t_rc, d.epoch_len))
        elif kind == "boundary":
            boundary = (now // d.epoch_len + 1) * d.epoch_len
            now = max(now, boundary - size * spacing)
        gap = spacing
        if kind == "paced":
            gap = int(rng.integers(spacing, 2 * d.t_delay + 1))
        for i in range(size):
            trace.append(MemRequest(thread, bank, rows[i % len(rows)], now, len(trace)))
            now += gap
    return trace


# ── 5. Spec strings ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GenSpec:
    family: str                  # attack | benign | mixed | fuzz
    kind: str = ""               # attack kind or benign category
    n: Optional[int] = None      # many_sided row count / fuzz index
    category: str = "H"


def parse_gen_spec(text: str) -> GenSpec:
    parts = [p.strip() for p in text.split(":")]
    family, rest = parts[0], parts[1:]
    try:
        if family == "benign" and len(rest) == 1 and rest[0] in BENIGN_PROFILES:
            return GenSpec("benign", rest[0])
        if family == "fuzz" and len(rest) == 1:
            return GenSpec("fuzz", n=int(rest[0]))
        if family in ("attack", "mixed") and rest and rest[0] in ATTACK_KINDS:
            kind, rest = rest[0], rest[1:]
            n = None
            if kind == "many_sided":
                n, rest = int(rest[0]), rest[1:]
            if family == "attack" and not rest:
                return GenSpec("attack", kind, n)
            if family == "mixed" and len(rest) <= 1 and all(r in BENIGN_PROFILES for r in rest):
                return GenSpec("mixed", kind, n, rest[0] if rest else "H")
    except (ValueError, IndexError):
        pass
    raise ValueError(f"bad generator spec {text!r}")


def generate(spec: GenSpec, cfg: Config, seed: int = 0,
             duration: Optional[int] = None) -> List[MemRequest]:
    if spec.family == "attack":
        return gen_attack_trace(spec.kind, cfg, n=spec.n, duration=duration)
    if spec.family == "benign":
        threads = range(cfg.timings.threads)
        trace = [r for th in threads
                 for r in gen_benign_trace(spec.kind, seed, cfg, thread=th, duration=duration)]
        return renumber(trace)
    if spec.family == "mixed":
        return gen_mixed_trace(spec.kind, cfg, seed, n=spec.n, category=spec.category, duration=duration)
    return gen_fuzz_trace(cfg, seed, spec.n or 0)
