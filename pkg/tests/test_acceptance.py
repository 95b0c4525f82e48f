"""End-to-end acceptance checks on the shipped configurations."""

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from src.config import BlastProfile, compute_nrh_star, load_config
from src.filters import DualCountingBloomFilter, ExactDualCounter
from src.mitigations import BlockHammer, Mechanism, make_mechanism, para_failure_frequency, para_probability
from src.security import EpochCensus, census_to_trace, check_census, verify_unsat
from src.simcore import run
from src.throttler import ThrottleMode
from src.traces import gen_attack_trace, gen_fuzz_trace, gen_mixed_trace, generate, parse_gen_spec

THRESHOLD_CONFIGS = ("nrh_32k", "nrh_16k", "nrh_8k", "nrh_4k", "nrh_2k", "nrh_1k")


def attack_traces(cfg):
    return {
        "double_sided": gen_attack_trace("double_sided", cfg),
        "many_sided": gen_attack_trace("many_sided", cfg, n=12),
        "epoch_straddle": gen_attack_trace("epoch_straddle", cfg),
    }


def test_derivations_reproduce(base_cfg):
    d = base_cfg.derived
    assert 7_700_000 <= d.t_delay <= 7_800_000
    assert d.n_rh_star == 16384
    assert d.history_capacity in (887, 888)
    ratio = compute_nrh_star(32768, BlastProfile.geometric(6)) / 32768
    assert ratio == pytest.approx(0.2539, abs=2e-4)


def test_census_search_verdicts(repo_file, broken_cfg):
    for name in THRESHOLD_CONFIGS:
        assert not verify_unsat(load_config(repo_file(f"configs/{name}.yaml")).derived).satisfiable
    halved = load_config(repo_file("configs/nrh_32k_half_delay.yaml")).derived
    v = verify_unsat(halved)
    assert v.satisfiable
    assert check_census(v.witness, halved)
    assert EpochCensus.is_valid_order(v.witness.order())
    # replay a witness through the RowBlocker at desk scale
    witness = verify_unsat(broken_cfg.derived).witness
    trace = census_to_trace(witness.order(), broken_cfg)
    m = run(trace, BlockHammer(broken_cfg, throttling=False), broken_cfg)
    assert m.max_window > broken_cfg.derived.lifetime_bound


def check_safety(cfg, trace):
    guarded = run(trace, BlockHammer(cfg), cfg)
    assert guarded.max_window <= cfg.derived.lifetime_bound
    assert not guarded.safety_violation
    assert all(delay <= cfg.derived.t_delay for delay in guarded.blocked_delays)
    plain = run(trace, Mechanism(), cfg)
    assert plain.max_window > cfg.derived.lifetime_bound


def test_attacks_are_contained(scaled_cfg):
    for trace in attack_traces(scaled_cfg).values():
        check_safety(scaled_cfg, trace)


def test_many_sided_victim_exposure_stays_below_n_rh(scaled_cfg):
    trace = gen_attack_trace("many_sided", scaled_cfg, n=12)
    guarded = run(trace, BlockHammer(scaled_cfg), scaled_cfg)
    assert guarded.max_window <= scaled_cfg.derived.lifetime_bound
    assert 0 < guarded.max_victim_exposure < scaled_cfg.params.n_rh
    plain = run(trace, Mechanism(), scaled_cfg)
    assert plain.max_victim_exposure >= scaled_cfg.params.n_rh


@pytest.mark.parametrize("index", range(50))
def test_fuzz_traces_are_contained(scaled_cfg, index):
    check_safety(scaled_cfg, gen_fuzz_trace(scaled_cfg, 2024, index))


@pytest.mark.slow
def test_thousand_fuzz_traces_are_contained(scaled_cfg):
    for index in range(1000):
        check_safety(scaled_cfg, gen_fuzz_trace(scaled_cfg, 7, index))


def test_dual_filter_has_no_false_negatives():
    rng = np.random.default_rng(2)
    n_bl = 16
    dcbf = DualCountingBloomFilter.build(128, 4, 1024, n_bl, rng)
    exact = ExactDualCounter()
    hot = rng.choice(1024, size=6, replace=False)
    for _ in range(10_000):
        op = rng.random()
        row = int(rng.choice(hot)) if rng.random() < 0.5 else int(rng.integers(1024))
        if op < 0.01:
            dcbf.clear_and_swap(0, rng)
            exact.clear_and_swap()
        elif op < 0.7:
            dcbf.insert(row)
            exact.insert(row)
        else:
            assert dcbf.test(row) >= min(exact.count(row), n_bl)


def test_blocking_delays_on_benign_traffic(scaled_cfg):
    trace = generate(parse_gen_spec("benign:H"), scaled_cfg, 11, duration=50_000_000)
    m = run(trace, BlockHammer(scaled_cfg), scaled_cfg)
    assert m.blocked_rate < 1e-3
    assert m.delay_percentiles()["p50_ps"] < scaled_cfg.derived.t_delay / 2
    assert all(delay <= scaled_cfg.derived.t_delay for delay in m.blocked_delays)


@pytest.mark.slow
@pytest.mark.parametrize("category", ["L", "M", "H"])
def test_blocking_delays_at_full_scale(base_cfg, category):
    trace = generate(parse_gen_spec(f"benign:{category}"), base_cfg, 5, duration=1_000_000_000)
    m = run(trace, BlockHammer(base_cfg), base_cfg)
    assert m.blocked_rate < 1e-3
    assert m.delay_percentiles()["p50_ps"] < base_cfg.derived.t_delay / 2


def test_throttling_isolates_the_attacker(scaled_cfg):
    cfg = scaled_cfg
    horizon = cfg.timings.t_refw // 2
    trace = gen_mixed_trace("many_sided", cfg, 3, n=12, category="M", duration=cfg.timings.t_refw)
    guarded = run(trace, BlockHammer(cfg), cfg, horizon=horizon)
    plain = run(trace, Mechanism(), cfg, horizon=horizon)

    attacker, *benign = guarded.rhli_peak
    assert 0 < max(attacker) <= 1
    assert all(level == 0 for row in benign for level in row)
    for epoch in guarded.rhli_epochs:
        assert all(level <= 1 for row in epoch["rhli"] for level in row)

    def benign_served(m):
        return sum(s.served for t, s in m.threads.items() if t != 0)

    assert benign_served(guarded) > benign_served(plain)


def test_observe_mode_is_neutral(scaled_cfg):
    trace = gen_mixed_trace("double_sided", scaled_cfg, 8, duration=50_000_000)
    plain = run(trace, Mechanism(), scaled_cfg)
    observed = run(trace, BlockHammer(scaled_cfg, ThrottleMode.OBSERVE), scaled_cfg)
    assert observed.commands == plain.commands
    assert observed.served == plain.served
    assert observed.max_window_per_row == plain.max_window_per_row
    assert observed.blocked_acts == 0


def test_para_statistics(scaled_cfg):
    trials, target = 100_000, scaled_cfg.para_failure_target
    para = make_mechanism("para", scaled_cfg)
    assert para.cfg.p == pytest.approx(2 * para_probability(64, target))
    freq = para_failure_frequency(para.cfg.p, 64, trials, np.random.default_rng(8),
                                  rows_per_bank=scaled_cfg.timings.rows_per_bank)
    sigma = math.sqrt(target * (1 - target) / trials)
    assert abs(freq - target) <= 4 * sigma

    getcontext().prec = 50
    exact = 1 - (Decimal("1e-15").ln() / 16384).exp()
    assert para_probability(16384, 1e-15) == pytest.approx(float(exact), rel=1e-9)
    assert para_probability(16384, 1e-15) == pytest.approx(2.106e-3, abs=1e-5)
