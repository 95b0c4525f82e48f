"""
src/config.py — load BlockHammer configs (YAML or flat key = value) + derived parameters.

Everything time-valued is an integer number of picoseconds. Derivations use
exact rationals and are ceiled/floored only at the very end.
"""

import hashlib
import logging
import math
import os
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

import yaml

log = logging.getLogger(__name__)

PS_PER_UNIT = {"ps": 1, "ns": 1_000, "us": 1_000_000, "ms": 1_000_000_000}

DURATION_KEYS = ("t_rc", "t_faw", "t_refw", "t_cbf", "t_delay_override")
COUNT_KEYS = (
    "banks_per_rank", "rows_per_bank", "threads", "n_rh", "blast_radius",
    "n_bl", "cbf_counters", "hash_count", "quota_max",
)
REQUIRED_KEYS = ("t_rc", "t_faw", "t_refw", "n_rh", "n_bl", "t_cbf")
KNOWN_KEYS = set(DURATION_KEYS) | set(COUNT_KEYS) | {"impact_factors", "para_failure_target"}

DEFAULT_FAILURE_TARGET = 1e-15


class ConfigError(ValueError):
    """Raised for malformed, incomplete or inconsistent configuration."""


@dataclass(frozen=True)
class DramTimings:
    t_rc: int                      # min ACT-to-ACT, same bank
    t_faw: int                     # four-activation window, per rank
    t_refw: int                    # refresh window
    banks_per_rank: int = 16
    rows_per_bank: int = 65536
    threads: int = 4

    def validate(self) -> None:
        for name in ("t_rc", "t_faw", "t_refw"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive duration")
        # DDR4 t_RC (46.25 ns) exceeds t_FAW (35 ns), so only the refresh window bounds both.
        if not (self.t_rc < self.t_refw and self.t_faw < self.t_refw):
            raise ConfigError("t_rc and t_faw must both be shorter than t_refw")
        if self.banks_per_rank < 1:
            raise ConfigError("banks_per_rank must be >= 1")
        if self.rows_per_bank < 2:
            raise ConfigError("rows_per_bank must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True)
class BlastProfile:
    blast_radius: int
    impact_factors: Tuple[Fraction, ...]

    @classmethod
    def geometric(cls, radius: int, ratio: Fraction = Fraction(1, 2)) -> "BlastProfile":
        return cls(radius, tuple(ratio ** k for k in range(radius)))

    def validate(self) -> None:
        if not self.impact_factors:
            raise ConfigError("impact_factors must not be empty")
        if len(self.impact_factors) != self.blast_radius:
            raise ConfigError(
                f"impact_factors has {len(self.impact_factors)} entries, blast_radius is {self.blast_radius}"
            )
        if self.impact_factors[0] != 1:
            raise ConfigError("c_1 must equal 1")
        for k, c in enumerate(self.impact_factors[1:], start=2):
            if not 0 < c < 1:
                raise ConfigError(f"c_{k} must lie strictly between 0 and 1 (got {c})")


@dataclass(frozen=True)
class BlockHammerParams:
    n_rh: int
    blast: BlastProfile
    n_bl: int
    t_cbf: int
    cbf_counters: int = 1024
    hash_count: int = 4
    quota_max: int = 16

    def validate(self, t_refw: int) -> None:
        self.blast.validate()
        if self.n_rh < 2:
            raise ConfigError("n_rh must be >= 2")
        if self.n_bl <= 0:
            raise ConfigError("n_bl must be positive")
        if not 0 < self.t_cbf <= t_refw:
            raise ConfigError("t_cbf must be positive and no longer than t_refw")
        if self.t_cbf % 2:
            raise ConfigError("t_cbf must be an even number of picoseconds (two epochs)")
        if self.cbf_counters < 2 or self.cbf_counters & (self.cbf_counters - 1):
            raise ConfigError(f"cbf_counters must be a power of two (got {self.cbf_counters})")
        if self.hash_count < 1:
            raise ConfigError("hash_count must be >= 1")
        if self.quota_max < 1:
            raise ConfigError("quota_max must be >= 1")


@dataclass(frozen=True)
class DerivedParams:
    n_rh_star: int
    t_delay: int
    epoch_len: int
    history_capacity: int
    counter_saturation: int
    throttle_saturation: int
    lifetime_bound: int            # floor((t_cbf / t_refw) * n_rh_star)
    n_bl: int
    t_rc: int
    t_faw: int
    t_cbf: int
    t_refw: int

    @property
    def throttle_denominator(self) -> Fraction:
        return Fraction(self.n_rh_star * self.t_cbf, self.t_refw) - self.n_bl


@dataclass(frozen=True)
class Config:
    timings: DramTimings
    params: BlockHammerParams
    derived: DerivedParams
    para_failure_target: float = DEFAULT_FAILURE_TARGET
    source: str = ""


# ── 1. Derivations ────────────────────────────────────────────────────────────

def compute_nrh_star(n_rh: int, blast: BlastProfile) -> int:
    """floor(n_rh / (2 * sum(c_k))): the many-sided effective threshold."""
    if not blast.impact_factors:
        raise ConfigError("impact_factors must not be empty")
    total = sum((Fraction(c) for c in blast.impact_factors), Fraction(0))
    return math.floor(Fraction(n_rh) / (2 * total))


def compute_tdelay(p: BlockHammerParams, t: DramTimings, n_rh_star: Optional[int] = None) -> int:
    """
    Minimum spacing between two activations of a blacklisted row, in ps.

    (t_cbf - n_bl * t_rc) / ((t_cbf / t_refw) * n_rh_star - n_bl), ceiled.
    """
    if n_rh_star is None:
        n_rh_star = compute_nrh_star(p.n_rh, p.blast)
    denominator = Fraction(p.t_cbf, t.t_refw) * n_rh_star - p.n_bl
    if denominator <= 0:
        raise ConfigError(
            f"n_bl={p.n_bl} must be below the scaled threshold (t_cbf/t_refw)*n_rh_star"
        )
    numerator = Fraction(p.t_cbf - p.n_bl * t.t_rc)
    if numerator <= 0:
        raise ConfigError("n_bl * t_rc does not fit into one CBF lifetime")
    return math.ceil(numerator / denominator)


def compute_history_capacity(t_delay: int, t_faw: int) -> int:
    return math.ceil(Fraction(4 * t_delay, t_faw))


def resolve(p: BlockHammerParams, t: DramTimings, t_delay_override: Optional[int] = None) -> DerivedParams:
    t.validate()
    p.validate(t.t_refw)
    n_rh_star = compute_nrh_star(p.n_rh, p.blast)
    if not 0 < p.n_bl < n_rh_star:
        raise ConfigError(f"n_bl={p.n_bl} must lie in (0, n_rh_star={n_rh_star})")
    t_delay = compute_tdelay(p, t, n_rh_star)
    if t_delay_override is not None:
        log.warning("t_delay overridden: %d ps (derived %d ps)", t_delay_override, t_delay)
        t_delay = t_delay_override
    if t_delay <= t.t_rc:
        raise ConfigError(f"t_delay={t_delay} ps must exceed t_rc={t.t_rc} ps")

    throttle_saturation = math.floor(Fraction(n_rh_star * p.t_cbf, t.t_refw))
    if throttle_saturation <= p.n_bl:
        raise ConfigError("throttle saturation must exceed n_bl")
    return DerivedParams(
        n_rh_star=n_rh_star,
        t_delay=t_delay,
        epoch_len=p.t_cbf // 2,
        history_capacity=max(4, compute_history_capacity(t_delay, t.t_faw)),
        counter_saturation=p.n_bl,
        throttle_saturation=throttle_saturation,
        lifetime_bound=throttle_saturation,
        n_bl=p.n_bl,
        t_rc=t.t_rc,
        t_faw=t.t_faw,
        t_cbf=p.t_cbf,
        t_refw=t.t_refw,
    )


def lifetime_activation_bound(derived: DerivedParams) -> int:
    """
    Activations a row gets in one CBF lifetime when hammered as fast as allowed:
    n_bl back-to-back at t_rc, then one per t_delay.
    """
    fast = derived.n_bl
    remaining = derived.t_cbf - fast * derived.t_rc
    return fast + remaining // derived.t_delay


def with_t_delay(cfg: Config, t_delay: int) -> Config:
    """Copy of cfg whose RowBlocker uses the given t_delay (broken-config experiments)."""
    derived = replace(
        cfg.derived,
        t_delay=t_delay,
        history_capacity=max(4, compute_history_capacity(t_delay, cfg.timings.t_faw)),
    )
    return replace(cfg, derived=derived)


# ── 2. Parsing ────────────────────────────────────────────────────────────────

_DURATION_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(ps|ns|us|ms)?\s*$")


def parse_duration(value: Any, key: str = "duration") -> int:
    """'46.25ns' -> 46250. Bare integers are picoseconds."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a duration, got {value!r}")
    if isinstance(value, int):
        return value
    m = _DURATION_RE.match(str(value))
    if not m:
        raise ConfigError(f"{key}: cannot parse duration {value!r}")
    ps = Fraction(m.group(1)) * PS_PER_UNIT[m.group(2) or "ps"]
    if ps.denominator != 1:
        raise ConfigError(f"{key}: {value!r} is not a whole number of picoseconds")
    return int(ps)


def _parse_count(value: Any, key: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip().upper()
    scale = 1
    if text.endswith("K"):
        text, scale = text[:-1], 1024
    try:
        return int(text) * scale
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _parse_impact_factors(value: Any) -> Tuple[Fraction, ...]:
    items = value if isinstance(value, (list, tuple)) else str(value).split(",")
    try:
        return tuple(Fraction(str(v).strip()) for v in items if str(v).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"impact_factors: cannot parse {value!r}") from None


def _read_flat(path: str) -> Dict[str, str]:
    raw: Dict[str, str] = {}
    with open(path, "r") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
    return raw


def build_config(raw: Dict[str, Any], source: str = "") -> Config:
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")

    durations = {k: parse_duration(raw[k], k) for k in DURATION_KEYS if raw.get(k) is not None}
    counts = {k: _parse_count(raw[k], k) for k in COUNT_KEYS if raw.get(k) is not None}

    radius = counts.pop("blast_radius", 1)
    if raw.get("impact_factors") is not None:
        blast = BlastProfile(radius, _parse_impact_factors(raw["impact_factors"]))
    else:
        blast = BlastProfile.geometric(radius)

    timings = DramTimings(
        t_rc=durations["t_rc"],
        t_faw=durations["t_faw"],
        t_refw=durations["t_refw"],
        banks_per_rank=counts.get("banks_per_rank", 16),
        rows_per_bank=counts.get("rows_per_bank", 65536),
        threads=counts.get("threads", 4),
    )
    params = BlockHammerParams(
        n_rh=counts["n_rh"],
        blast=blast,
        n_bl=counts["n_bl"],
        t_cbf=durations["t_cbf"],
        cbf_counters=counts.get("cbf_counters", 1024),
        hash_count=counts.get("hash_count", 4),
        quota_max=counts.get("quota_max", 16),
    )
    try:
        target = float(raw.get("para_failure_target", DEFAULT_FAILURE_TARGET))
    except (TypeError, ValueError):
        raise ConfigError(f"para_failure_target: cannot parse {raw['para_failure_target']!r}") from None
    if not 0 < target < 1:
        raise ConfigError("para_failure_target must lie in (0, 1)")

    derived = resolve(params, timings, durations.get("t_delay_override"))
    return Config(timings=timings, params=params, derived=derived,
                  para_failure_target=target, source=source)


def load_config(path: Optional[str] = None) -> Config:
    path = path or os.environ.get("RHSIM_CONFIG") or "config.yaml"
    if path.endswith((".yaml", ".yml")):
        with open(path, "r") as f:
            try:
                raw = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: invalid YAML ({e})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping of keys to values")
    else:
        raw = _read_flat(path)

    cfg = build_config(raw, source=path)
    log.info("Loaded %s: n_rh_star=%d t_delay=%d ps history=%d",
             path, cfg.derived.n_rh_star, cfg.derived.t_delay, cfg.derived.history_capacity)
    return cfg


def default_seed() -> int:
    return int(os.environ.get("RHSIM_SEED") or 0)


def config_hash(cfg: Config) -> str:
    """Short fingerprint of the resolved parameters, stamped into every report."""
    key = f"{cfg.timings}|{cfg.params}|{cfg.derived}|{cfg.para_failure_target}"
    return hashlib.md5(key.encode()).hexdigest()[:8]


def derived_rows(cfg: Config) -> List[List[Any]]:
    """Header + rows table of every derived quantity (printed by `derive`)."""
    d = cfg.derived
    return [
        ["parameter", "value"],
        ["n_rh", cfg.params.n_rh],
        ["n_rh_star", d.n_rh_star],
        ["n_rh_star_ratio", round(d.n_rh_star / cfg.params.n_rh, 4)],
        ["n_bl", d.n_bl],
        ["t_delay_ps", d.t_delay],
        ["epoch_len_ps", d.epoch_len],
        ["history_capacity", d.history_capacity],
        ["counter_saturation", d.counter_saturation],
        ["throttle_saturation", d.throttle_saturation],
        ["lifetime_bound", d.lifetime_bound],
    ]
