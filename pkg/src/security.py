"""
src/security.py — epoch-type bounds, attack-feasibility census search, and cross-validation.

  1. nep_max: most activations one aggressor row can get in one epoch, per epoch type
  2. check_census / verify_unsat: exhaustive search over epoch censuses in one
     refresh window for a combination that beats the activation threshold
  3. cross_validate: adversarial traces through the real RowBlocker, compared
     with the analytic verdict
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config, DerivedParams
from .mitigations import BlockHammer
from .simcore import MemRequest, run
from .throttler import ThrottleMode
from .traces import aggressor_rows, attack_spacing, gen_attack_trace, gen_fuzz_trace

log = logging.getLogger(__name__)

# exhaustive 5-way enumeration above this many epochs gets slow; a reduced
# search over (n2, n3) gives the same verdict
EXHAUSTIVE_MAX_EPOCHS = 16


class EpochType(Enum):
    T0 = "T0"    # n_pre < N_BL, n_ep < residual: never blacklisted
    T1 = "T1"    # n_pre < N_BL, residual <= n_ep < N_BL: blacklisted late
    T2 = "T2"    # n_pre < N_BL, n_ep >= N_BL: fast burst, then t_delay pacing
    T3 = "T3"    # n_pre >= N_BL, n_ep < N_BL: blacklisted throughout
    T4 = "T4"    # n_pre >= N_BL, n_ep >= N_BL: blacklisted throughout

    @property
    def n_pre_range(self) -> str:
        return "< N_BL" if self in (EpochType.T0, EpochType.T1, EpochType.T2) else ">= N_BL"

    @property
    def n_ep_range(self) -> str:
        return {
            EpochType.T0: "< N_BL*",
            EpochType.T1: "[N_BL*, N_BL)",
            EpochType.T2: ">= N_BL",
            EpochType.T3: "< N_BL",
            EpochType.T4: ">= N_BL",
        }[self]


EPOCH_TYPES = tuple(EpochType)

# which epoch types may directly precede each type
PREDECESSORS: Dict[EpochType, Tuple[EpochType, ...]] = {
    EpochType.T0: (EpochType.T0, EpochType.T1, EpochType.T3),
    EpochType.T1: (EpochType.T0, EpochType.T1, EpochType.T3),
    EpochType.T2: (EpochType.T0, EpochType.T1, EpochType.T3),
    EpochType.T3: (EpochType.T2, EpochType.T4),
    EpochType.T4: (EpochType.T2, EpochType.T4),
}


@dataclass(frozen=True)
class EpochCensus:
    n0: int = 0
    n1: int = 0
    n2: int = 0
    n3: int = 0
    n4: int = 0

    @property
    def counts(self) -> Tuple[int, int, int, int, int]:
        return (self.n0, self.n1, self.n2, self.n3, self.n4)

    @property
    def epochs(self) -> int:
        return sum(self.counts)

    def by_type(self) -> Dict[EpochType, int]:
        return dict(zip(EPOCH_TYPES, self.counts))

    def order(self) -> List[EpochType]:
        """
        One epoch sequence realising the census: T0s and T1s first, then
        alternating T2/T3 with the whole T4 run right after the first T2.
        """
        seq = [EpochType.T0] * self.n0 + [EpochType.T1] * self.n1
        chain = [EpochType.T4] * self.n4
        n2, n3 = self.n2, self.n3
        while n2 or n3:
            if n2:
                seq.append(EpochType.T2)
                n2 -= 1
                seq += chain
                chain = []
            if n3:
                seq.append(EpochType.T3)
                n3 -= 1
        return seq + chain

    @staticmethod
    def is_valid_order(seq: Sequence[EpochType]) -> bool:
        return all(prev in PREDECESSORS[nxt] for prev, nxt in zip(seq, seq[1:]))

    def __str__(self) -> str:
        parts = [f"{t.value}:{n}" for t, n in self.by_type().items() if n]
        return "{" + ", ".join(parts) + "}" if parts else "{}"


@dataclass(frozen=True)
class SecurityVerdict:
    satisfiable: bool
    witness: Optional[EpochCensus]
    max_total_acts: int
    threshold: Fraction
    horizon_epochs: int
    slack: int = 0
    best_census: Optional[EpochCensus] = None

    def __post_init__(self):
        if self.satisfiable != (self.witness is not None):
            raise ValueError("a witness must be present iff the census search is satisfiable")

    @property
    def label(self) -> str:
        return "SAT" if self.satisfiable else "UNSAT"


# ── 1. Per-epoch bounds ───────────────────────────────────────────────────────

def _epoch_ratio(d: DerivedParams) -> Fraction:
    return Fraction(d.epoch_len, d.t_delay)


def nep_max(tag: EpochType, derived: DerivedParams, n_bl_residual: int) -> int:
    """Maximum activations of one row in a single epoch of type `tag`."""
    if not 1 <= n_bl_residual <= derived.n_bl:
        raise ValueError(f"n_bl_residual must lie in [1, {derived.n_bl}] (got {n_bl_residual})")
    paced = math.floor(_epoch_ratio(derived))
    if tag is EpochType.T0:
        return n_bl_residual - 1
    if tag is EpochType.T1:
        return derived.n_bl - 1
    if tag is EpochType.T2:
        # t_ep = t_1 + t_2: residual ACTs at t_rc, then one per t_delay
        fast = n_bl_residual * (1 - Fraction(derived.t_rc, derived.t_delay))
        return math.floor(_epoch_ratio(derived) + fast)
    if tag is EpochType.T3:
        return min(derived.n_bl - 1, paced)
    return paced


def nep_max_printed(tag: EpochType, derived: DerivedParams, n_bl_residual: int) -> int:
    """Bounds as tabulated: T2 with a minus sign, T3 without the t_delay pacing."""
    if tag is EpochType.T2:
        fast = n_bl_residual * (1 - Fraction(derived.t_rc, derived.t_delay))
        return math.floor(_epoch_ratio(derived) - fast)
    if tag is EpochType.T3:
        return derived.n_bl - 1
    return nep_max(tag, derived, n_bl_residual)


def horizon_epochs(derived: DerivedParams) -> int:
    return derived.t_refw // derived.epoch_len


def success_threshold(derived: DerivedParams) -> Fraction:
    return Fraction(derived.t_cbf, derived.t_refw) * derived.n_rh_star


def epoch_bounds(derived: DerivedParams) -> Tuple[int, ...]:
    """Attacker-optimal per-type bounds (residual = N_BL)."""
    return tuple(nep_max(t, derived, derived.n_bl) for t in EPOCH_TYPES)


def coupled_t2_epochs(c: EpochCensus) -> int:
    """
    T2 epochs that must directly follow a T0/T1 epoch in every ordering of
    the census. The rest can start the window or follow a T3.
    """
    if c.n0 + c.n1 == 0:
        return 0
    return max(0, c.n2 - c.n3)


def census_total(c: EpochCensus, derived: DerivedParams) -> int:
    """
    Upper bound on one row's activations over the census. A T2 right after a
    T0/T1 epoch of x activations keeps a residual of N_BL - x; the pair total
    grows with x, so it is scored at x = N_BL - 1 (residual 1).
    """
    bounds = epoch_bounds(derived)
    total = sum(n * b for n, b in zip(c.counts, bounds))
    penalty = bounds[2] - nep_max(EpochType.T2, derived, 1)
    return total - coupled_t2_epochs(c) * penalty


# ── 2. Census search ──────────────────────────────────────────────────────────

def _feasible(c: EpochCensus, horizon: int, slack: int) -> bool:
    n0, n1, n2, n3, n4 = c.counts
    if min(c.counts) < 0:
        return False
    if c.epochs > horizon:
        return False
    return n0 + n1 + n2 <= n0 + n1 + n3 + slack and n3 + n4 <= n2 + n4


def check_census(c: EpochCensus, derived: DerivedParams, slack: int = 0) -> bool:
    """
    True iff the census describes a successful attack: it fits in one refresh
    window, respects the predecessor counts, and its activation total is
    strictly above the threshold.
    """
    if not _feasible(c, horizon_epochs(derived), slack):
        return False
    return census_total(c, derived) > success_threshold(derived)


def iter_censuses(horizon: int) -> Iterator[EpochCensus]:
    """Every census with at most `horizon` epochs in total."""
    for n0, n1, n2, n3 in itertools.product(range(horizon + 1), repeat=4):
        rest = horizon - n0 - n1 - n2 - n3
        if rest < 0:
            continue
        for n4 in range(rest + 1):
            yield EpochCensus(n0, n1, n2, n3, n4)


def _reduced_censuses(horizon: int, slack: int) -> Iterator[EpochCensus]:
    # n0, n1, n4 are unconstrained apart from the horizon and the T2 coupling,
    # which only depends on whether any T0/T1 is present: spending every free
    # epoch on one type dominates
    for n2 in range(horizon + 1):
        for n3 in range(max(0, n2 - slack), min(n2, horizon - n2) + 1):
            for free in (0, 1, 4):
                counts = [0, 0, n2, n3, 0]
                counts[free] = horizon - n2 - n3
                yield EpochCensus(*counts)


def verify_unsat(derived: DerivedParams, slack: int = 0) -> SecurityVerdict:
    """
    Search every census for one that beats the threshold. slack = 1 lets one
    T0/T1/T2 epoch go without a predecessor (the first epoch after reset).
    """
    horizon = horizon_epochs(derived)
    threshold = success_threshold(derived)
    if horizon <= EXHAUSTIVE_MAX_EPOCHS:
        candidates = iter_censuses(horizon)
    else:
        candidates = _reduced_censuses(horizon, slack)

    best: Optional[EpochCensus] = None
    best_total = -1
    for c in candidates:
        if not _feasible(c, horizon, slack):
            continue
        total = census_total(c, derived)
        if total > best_total:
            best, best_total = c, total
    sat = best_total > threshold
    verdict = SecurityVerdict(
        satisfiable=sat,
        witness=best if sat else None,
        max_total_acts=max(best_total, 0),
        threshold=threshold,
        horizon_epochs=horizon,
        slack=slack,
        best_census=best,
    )
    log.info("Census search (%d epochs, slack %d): %s, max %d vs threshold %s",
             horizon, slack, verdict.label, verdict.max_total_acts, threshold)
    return verdict


def bound_table(derived: DerivedParams) -> List[List[Any]]:
    """Header + one row per epoch type, attacker-optimal residual (N_BL)."""
    rows: List[List[Any]] = [["epoch_type", "n_pre", "n_ep", "nep_max", "nep_max_printed"]]
    for t in EPOCH_TYPES:
        rows.append([t.value, t.n_pre_range, t.n_ep_range,
                     nep_max(t, derived, derived.n_bl), nep_max_printed(t, derived, derived.n_bl)])
    return rows


# ── 3. Cross-validation against the simulator ─────────────────────────────────

@dataclass
class CrossValidation:
    verdict: SecurityVerdict
    bound: int
    candidates: int = 0
    max_count: int = 0
    worst: str = ""
    per_family: Dict[str, int] = field(default_factory=dict)

    @property
    def exceeded(self) -> bool:
        return self.max_count > self.bound

    @property
    def agrees(self) -> bool:
        return self.exceeded == self.verdict.satisfiable

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.label,
            "bound": self.bound,
            "candidates": self.candidates,
            "max_count": self.max_count,
            "worst": self.worst,
            "exceeded": self.exceeded,
            "agrees": self.agrees,
            "per_family": dict(sorted(self.per_family.items())),
        }


def census_to_trace(order: Sequence[EpochType], cfg: Config, bank: int = 0) -> List[MemRequest]:
    """
    Double-sided requests shaped epoch by epoch: T2/T4 epochs hammer at full
    rate for the whole epoch, the others stop after their per-type bound.
    """
    d = cfg.derived
    rows = aggressor_rows("double_sided", cfg)
    spacing = attack_spacing(cfg)
    trace: List[MemRequest] = []
    for e, tag in enumerate(order):
        start, end = e * d.epoch_len, (e + 1) * d.epoch_len
        if tag in (EpochType.T2, EpochType.T4):
            count = (end - start) // spacing
        else:
            count = len(rows) * nep_max(tag, d, d.n_bl)
        for i in range(count):
            t = start + i * spacing
            if t >= end:
                break
            trace.append(MemRequest(0, bank, rows[i % len(rows)], t, len(trace)))
    return trace


def _max_window(trace: Sequence[MemRequest], cfg: Config, seed: int) -> int:
    # RowBlocker alone: the throttler would hide a broken t_delay
    mech = BlockHammer(cfg, ThrottleMode.FULL, np.random.default_rng(seed), throttling=False)
    return run(trace, mech, cfg, seed=seed).max_window


def cross_validate(cfg: Config, trials: int = 100, seed: int = 0) -> CrossValidation:
    """
    Replay greedy, epoch-straddle, census-witness and seeded fuzz traces
    through the RowBlocker and compare the worst per-row window with the
    analytic verdict.
    """
    d = cfg.derived
    verdict = verify_unsat(d)
    report = CrossValidation(verdict=verdict, bound=d.lifetime_bound)

    census = verdict.witness or verdict.best_census or EpochCensus()
    families = [
        ("greedy", gen_attack_trace("double_sided", cfg, duration=2 * d.t_refw)),
        ("epoch_straddle", gen_attack_trace("epoch_straddle", cfg)),
        ("witness", census_to_trace(census.order(), cfg)),
        ("greedy_witness", census_to_trace([EpochType.T2] + [EpochType.T4] * horizon_epochs(d), cfg)),
    ]
    families += [(f"fuzz:{i}", gen_fuzz_trace(cfg, seed, i)) for i in range(trials)]

    for name, trace in families:
        count = _max_window(trace, cfg, seed)
        family = name.split(":")[0]
        report.per_family[family] = max(report.per_family.get(family, 0), count)
        report.candidates += 1
        if count > report.max_count or not report.worst:
            report.max_count, report.worst = count, name

    log.info("Cross-validation: %d candidates, max window %d (bound %d, worst %s), analytic %s",
             report.candidates, report.max_count, report.bound, report.worst, verdict.label)
    if not report.agrees:
        log.error("Analytic verdict %s disagrees with simulated max window %d", verdict.label, report.max_count)
    return report
