"""
src/metrics.py — simulation metrics, percentiles, and JSON / CSV report writing.

Report sections:
  1. Run identity (mechanism, mode, seed, config fingerprint)
  2. Per-thread served requests and latency avg / p50 / p90 / max
  3. Row-buffer hits / misses / conflicts, activations, refreshes
  4. Blocked ACTs, false positives, blocked-delay P50 / P90 / P100
  5. Safety oracle: per-row max sliding-window count, victim exposure
  6. RHLI matrix per epoch (thread x bank) + running peak
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)


def _percentile(data: List[int], p: int) -> int:
    if not data:
        return 0
    return int(np.percentile(np.asarray(data, dtype=np.int64), p, method="inverted_cdf"))


@dataclass
class ThreadStats:
    served: int = 0
    latencies: List[int] = field(default_factory=list)

    def record(self, latency: int) -> None:
        self.served += 1
        self.latencies.append(latency)

    def summary(self) -> Dict[str, Any]:
        return {
            "served": self.served,
            "latency_avg_ps": round(float(np.mean(self.latencies)), 1) if self.latencies else 0.0,
            "latency_p50_ps": _percentile(self.latencies, 50),
            "latency_p90_ps": _percentile(self.latencies, 90),
            "latency_max_ps": max(self.latencies, default=0),
        }


@dataclass(frozen=True)
class Command:
    time: int
    kind: str          # "ACT" | "RD" | "REF"
    bank: int
    row: int
    thread: int = -1


@dataclass
class SimMetrics:
    mechanism: str = "none"
    mode: str = "full"
    seed: int = 0
    config_hash: str = ""
    requests: int = 0
    threads: Dict[int, ThreadStats] = field(default_factory=dict)
    row_hits: int = 0
    row_misses: int = 0
    row_conflicts: int = 0
    activations: int = 0
    refreshes: int = 0
    blocked_acts: int = 0
    false_positives: int = 0
    observed_unsafe: int = 0
    throttled_acts: int = 0
    blocked_delays: List[int] = field(default_factory=list)
    window_bound: int = 0
    max_window_per_row: Dict[Tuple[int, int], int] = field(default_factory=dict)
    max_victim_exposure: float = 0.0
    rhli_epochs: List[Dict[str, Any]] = field(default_factory=list)
    rhli_peak: Optional[List[List[float]]] = None
    end_time_ps: int = 0
    safety_violation: bool = False
    commands: List[Command] = field(default_factory=list)

    def thread(self, t: int) -> ThreadStats:
        if t not in self.threads:
            self.threads[t] = ThreadStats()
        return self.threads[t]

    @property
    def served(self) -> int:
        return sum(s.served for s in self.threads.values())

    @property
    def max_window(self) -> int:
        return max(self.max_window_per_row.values(), default=0)

    @property
    def fp_rate(self) -> float:
        return self.false_positives / self.activations if self.activations else 0.0

    @property
    def blocked_rate(self) -> float:
        return self.blocked_acts / self.activations if self.activations else 0.0

    def delay_percentiles(self) -> Dict[str, int]:
        return {
            "p50_ps": _percentile(self.blocked_delays, 50),
            "p90_ps": _percentile(self.blocked_delays, 90),
            "p100_ps": max(self.blocked_delays, default=0),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run": {
                "mechanism": self.mechanism,
                "mode": self.mode,
                "seed": self.seed,
                "config_hash": self.config_hash,
                "end_time_ps": self.end_time_ps,
            },
            "requests": {"offered": self.requests, "served": self.served},
            "threads": {str(t): s.summary() for t, s in sorted(self.threads.items())},
            "row_buffer": {
                "hits": self.row_hits,
                "misses": self.row_misses,
                "conflicts": self.row_conflicts,
                "activations": self.activations,
                "refreshes": self.refreshes,
            },
            "blocking": {
                "blocked_acts": self.blocked_acts,
                "false_positives": self.false_positives,
                "fp_rate": round(self.fp_rate, 8),
                "observed_unsafe": self.observed_unsafe,
                "throttled_acts": self.throttled_acts,
                "delay": self.delay_percentiles(),
            },
            "safety": {
                "window_bound": self.window_bound,
                "max_window": self.max_window,
                "max_victim_exposure": self.max_victim_exposure,
                "violation": self.safety_violation,
                "max_window_per_row": {
                    f"{b}:{r}": c for (b, r), c in sorted(self.max_window_per_row.items())
                },
            },
            "rhli": {"epochs": self.rhli_epochs, "peak": self.rhli_peak},
            "commands": len(self.commands),
        }


def metric_rows(metrics: SimMetrics) -> List[List[Any]]:
    """Flatten the report into header + one row per metric."""
    rows: List[List[Any]] = [["metric", "value"]]

    def walk(prefix: str, node: Any) -> None:
        if isinstance(node, dict):
            for k, v in node.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(node, list):
            rows.append([prefix, json.dumps(node, sort_keys=True)])
        else:
            rows.append([prefix, node])

    walk("", metrics.to_dict())
    return rows


def write_metrics(metrics: SimMetrics, path: str) -> str:
    if path.endswith(".csv"):
        with open(path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows(metric_rows(metrics))
    else:
        with open(path, "w") as f:
            json.dump(metrics.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    log.info("Metrics written -> %s", path)
    return path
