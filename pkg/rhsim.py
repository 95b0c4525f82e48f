"""
rhsim.py — main entry point.

Usage:
  python3 rhsim.py derive   --config config.yaml
  python3 rhsim.py verify   --config config.yaml [--cross-validate 100]
  python3 rhsim.py simulate --config configs/scaled.yaml --gen attack:double_sided --mechanism blockhammer
  python3 rhsim.py simulate --config configs/scaled.yaml --trace my.trace --out metrics.csv
  python3 rhsim.py sweep    --config configs/nrh_*.yaml --gen benign:H --out-dir results --jobs 4

Exit codes: 0 ok / UNSAT, 1 config error, 2 SAT or safety violation,
3 missing file, 4 trace parse error, 5 internal invariant violation.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence

logging.basicConfig(
    level=os.environ.get("RHSIM_LOG", "INFO").upper(),
    format="%(asctime)s.%(msecs)03d [%(levelname)s] %(name)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
log = logging.getLogger(__name__)

from src.config import ConfigError, config_hash, default_seed, derived_rows, load_config, parse_duration
from src.metrics import write_metrics
from src.mitigations import MECHANISMS, make_mechanism
from src.rowblocker import HistoryOverflowError
from src.security import bound_table, cross_validate, verify_unsat
from src.simcore import SimulationError, TimingViolationError, run
from src.traces import TraceParseError, generate, parse_gen_spec, parse_trace, write_trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSAFE = 2
EXIT_MISSING = 3
EXIT_TRACE = 4
EXIT_INTERNAL = 5


@dataclass(frozen=True)
class RunSpec:
    config_path: str
    trace_path: Optional[str] = None
    gen: Optional[str] = None
    mechanism: str = "blockhammer"
    mode: str = "full"
    seed: int = 0
    output_path: Optional[str] = None
    horizon: Optional[str] = None
    save_trace: Optional[str] = None

    def __post_init__(self):
        if (self.trace_path is None) == (self.gen is None):
            raise ValueError("exactly one of --trace / --gen is required")


def _format_table(rows: Sequence[Sequence[Any]]) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows)


def _load(path: str):
    """load_config, mapping failures to exit codes. Returns (cfg, None) or (None, code)."""
    try:
        return load_config(path), None
    except FileNotFoundError:
        log.error("Config file not found: %s", path)
        return None, EXIT_MISSING
    except ConfigError as e:
        log.error("Config error in %s: %s", path, e)
        return None, EXIT_CONFIG


# ── Subcommands ───────────────────────────────────────────────────────────────

def cmd_simulate(spec: RunSpec) -> int:
    # 1. Config
    cfg, code = _load(spec.config_path)
    if cfg is None:
        return code
    try:
        horizon = parse_duration(spec.horizon, "horizon") if spec.horizon else None
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG

    # 2. Trace
    try:
        if spec.trace_path is not None:
            trace = parse_trace(spec.trace_path, cfg)
        else:
            trace = generate(parse_gen_spec(spec.gen), cfg, spec.seed, duration=horizon)
    except FileNotFoundError:
        log.error("Trace file not found: %s", spec.trace_path)
        return EXIT_MISSING
    except TraceParseError as e:
        log.error("Trace parse error in %s: %s", spec.trace_path, e)
        return EXIT_TRACE
    except ValueError as e:
        log.error("Generator error: %s", e)
        return EXIT_CONFIG
    if spec.save_trace:
        write_trace(trace, spec.save_trace)

    # 3. Mechanism + run
    mechanism = make_mechanism(spec.mechanism, cfg, spec.mode, spec.seed)
    try:
        metrics = run(trace, mechanism, cfg, horizon=horizon, seed=spec.seed)
    except (SimulationError, TimingViolationError, HistoryOverflowError) as e:
        log.error("Internal invariant violated: %s", e)
        return EXIT_INTERNAL
    metrics.mode = spec.mode if spec.mechanism == "blockhammer" else "-"
    metrics.config_hash = config_hash(cfg)

    # 4. Report
    if spec.output_path:
        write_metrics(metrics, spec.output_path)
    else:
        print(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))

    # 5. Safety verdict
    if metrics.safety_violation:
        log.error("Safety oracle violated under %s: max window %d > bound %d (exposure %.2f)",
                  spec.mechanism, metrics.max_window, metrics.window_bound, metrics.max_victim_exposure)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_verify(config_path: str, cross_trials: Optional[int] = None, seed: int = 0) -> int:
    cfg, code = _load(config_path)
    if cfg is None:
        return code

    verdict = verify_unsat(cfg.derived)
    slack = verify_unsat(cfg.derived, slack=1)
    print(verdict.label)
    if verdict.witness is not None:
        print(f"witness: {verdict.witness}")
    print(f"max activations {verdict.max_total_acts} vs threshold {verdict.threshold}"
          f" over {verdict.horizon_epochs} epochs (best census {verdict.best_census})")
    print(f"first-epoch slack: {slack.label} (max {slack.max_total_acts})")
    print(_format_table(bound_table(cfg.derived)))

    if cross_trials is not None:
        report = cross_validate(cfg, trials=cross_trials, seed=seed)
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        if not report.agrees:
            return EXIT_INTERNAL
    return EXIT_UNSAFE if verdict.satisfiable else EXIT_OK


def cmd_derive(config_path: str) -> int:
    cfg, code = _load(config_path)
    if cfg is None:
        return code
    rows = derived_rows(cfg)
    print(_format_table(rows))
    print(json.dumps({k: v for k, v in rows[1:]}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(specs: List[RunSpec], jobs: int = 1) -> int:
    """Independent runs, one output file each; returns the worst exit code."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(cmd_simulate, specs))
    else:
        codes = [cmd_simulate(s) for s in specs]
    for spec, code in zip(specs, codes):
        log.info("sweep %s -> %s (exit %d)", spec.config_path, spec.output_path, code)
    return max(codes, default=EXIT_OK)


# ── CLI ───────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rhsim", description="BlockHammer memory-controller simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, many: bool = False) -> None:
        if many:
            p.add_argument("--config", nargs="+", required=True)
        else:
            p.add_argument("--config", default=os.environ.get("RHSIM_CONFIG") or "config.yaml")

    def run_flags(p: argparse.ArgumentParser) -> None:
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--trace", help="trace file: ready_at_ps,thread,bank,row")
        src.add_argument("--gen", help="generator, e.g. attack:double_sided, benign:H, mixed:double_sided:H, fuzz:3")
        p.add_argument("--mechanism", choices=MECHANISMS, default="blockhammer")
        p.add_argument("--mode", choices=("observe", "full"), default="full")
        p.add_argument("--seed", type=int, default=default_seed())
        p.add_argument("--horizon", help="stop simulating at this time, e.g. 150us")

    p = sub.add_parser("simulate", help="run one trace through the memory controller")
    common(p)
    run_flags(p)
    p.add_argument("--out", help="metrics file (.json or .csv); stdout if omitted")
    p.add_argument("--save-trace", help="also write the simulated trace to this file")

    p = sub.add_parser("verify", help="census search for a successful attack")
    common(p)
    p.add_argument("--cross-validate", type=int, metavar="TRIALS",
                   help="also replay adversarial traces (TRIALS fuzz traces)")
    p.add_argument("--seed", type=int, default=default_seed())

    p = sub.add_parser("derive", help="print derived parameters")
    common(p)

    p = sub.add_parser("sweep", help="simulate several configs in parallel")
    common(p, many=True)
    run_flags(p)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--ext", choices=("json", "csv"), default="json")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    log.info("=== rhsim %s starting ===", args.command)

    if args.command == "derive":
        return cmd_derive(args.config)
    if args.command == "verify":
        return cmd_verify(args.config, args.cross_validate, args.seed)

    if args.command == "simulate":
        spec = RunSpec(args.config, args.trace, args.gen, args.mechanism, args.mode,
                       args.seed, args.out, args.horizon, args.save_trace)
        return cmd_simulate(spec)

    os.makedirs(args.out_dir, exist_ok=True)
    specs = [
        RunSpec(path, args.trace, args.gen, args.mechanism, args.mode, args.seed,
                os.path.join(args.out_dir, f"{os.path.splitext(os.path.basename(path))[0]}.{args.ext}"),
                args.horizon)
        for path in args.config
    ]
    return cmd_sweep(specs, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
