import pytest

from src import security
from src.config import build_config, load_config, with_t_delay
from src.security import (
    EPOCH_TYPES, EpochCensus, EpochType, SecurityVerdict, bound_table, census_to_trace, census_total,
    check_census, coupled_t2_epochs, cross_validate, epoch_bounds, horizon_epochs, nep_max,
    nep_max_printed, success_threshold, verify_unsat,
)

T0, T1, T2, T3, T4 = EPOCH_TYPES


# ── Per-epoch bounds ──────────────────────────────────────────────────────────

def test_scaled_epoch_bounds(scaled_cfg):
    d = scaled_cfg.derived
    assert epoch_bounds(d) == (15, 15, 39, 15, 24)
    assert horizon_epochs(d) == 2
    assert success_threshold(d) == 64


def test_32k_epoch_bounds(base_cfg):
    assert epoch_bounds(base_cfg.derived) == (8191, 8191, 12263, 4120, 4120)


def test_nep_max_residual(scaled_cfg):
    d = scaled_cfg.derived
    assert nep_max(T0, d, 5) == 4
    assert nep_max(T1, d, 5) == 15
    assert nep_max(T2, d, 1) == 25
    with pytest.raises(ValueError):
        nep_max(T2, d, 0)
    with pytest.raises(ValueError):
        nep_max(T2, d, 17)


@pytest.mark.parametrize("name", ["config", "configs/scaled", "configs/nrh_1k", "configs/nrh_32k_half_delay"])
def test_t4_never_beats_t2(repo_file, name):
    d = load_config(repo_file(f"{name}.yaml")).derived
    for residual in sorted({1, 2, d.n_bl // 2, d.n_bl - 1, d.n_bl}):
        assert nep_max(T4, d, residual) <= nep_max(T2, d, residual)


def test_printed_bounds(scaled_cfg):
    d = scaled_cfg.derived
    assert nep_max_printed(T2, d, 16) == 8
    assert nep_max_printed(T3, d, 16) == 15
    assert nep_max_printed(T4, d, 16) == nep_max(T4, d, 16)


def test_bounds_shrink_as_t_delay_grows(base_cfg):
    d = base_cfg.derived
    previous = None
    for t_delay in range(d.t_delay // 2, 2 * d.t_delay, d.t_delay // 8):
        bounds = epoch_bounds(with_t_delay(base_cfg, t_delay).derived)
        assert bounds[4] <= bounds[2]
        if previous is not None:
            assert all(b <= p for b, p in zip(bounds, previous))
        previous = bounds


def test_bound_table(scaled_cfg):
    rows = bound_table(scaled_cfg.derived)
    assert rows[0] == ["epoch_type", "n_pre", "n_ep", "nep_max", "nep_max_printed"]
    assert rows[3] == ["T2", "< N_BL", ">= N_BL", 39, 8]
    assert len(rows) == 6


# ── Census search ─────────────────────────────────────────────────────────────

def test_check_census(scaled_cfg, broken_cfg):
    d, broken = scaled_cfg.derived, broken_cfg.derived
    assert not check_census(EpochCensus(n2=1, n3=1), d)
    assert check_census(EpochCensus(n4=2), broken)
    # T2 needs a T0/T1/T3 predecessor unless the first epoch is exempt
    assert not check_census(EpochCensus(n2=1, n4=1), broken)
    assert check_census(EpochCensus(n2=1, n4=1), broken, slack=1)
    assert not check_census(EpochCensus(n4=3), broken)
    assert not check_census(EpochCensus(n0=-1, n4=2), broken)


def test_32k_unsat(base_cfg):
    v = verify_unsat(base_cfg.derived)
    assert not v.satisfiable and v.label == "UNSAT"
    assert v.witness is None
    assert v.max_total_acts == 16383
    assert v.best_census == EpochCensus(n2=1, n3=1)
    assert v.threshold == 16384


@pytest.mark.parametrize("name, n_rh_star", [
    ("nrh_32k", 16384), ("nrh_16k", 8192), ("nrh_8k", 4096),
    ("nrh_4k", 2048), ("nrh_2k", 1024), ("nrh_1k", 512),
])
def test_per_threshold_configs_unsat(repo_file, name, n_rh_star):
    v = verify_unsat(load_config(repo_file(f"configs/{name}.yaml")).derived)
    assert not v.satisfiable
    assert v.max_total_acts == n_rh_star - 1


@pytest.mark.parametrize("name, n_rh_star", [
    ("nrh_32k", 16384), ("nrh_16k", 8192), ("nrh_8k", 4096),
    ("nrh_4k", 2048), ("nrh_2k", 1024), ("nrh_1k", 512),
])
def test_first_epoch_slack_stays_unsat(repo_file, name, n_rh_star):
    v = verify_unsat(load_config(repo_file(f"configs/{name}.yaml")).derived, slack=1)
    assert not v.satisfiable
    assert v.max_total_acts == n_rh_star - 1


def test_t2_after_t1_keeps_only_the_residual(base_cfg):
    d = base_cfg.derived
    census = EpochCensus(n1=1, n2=1)
    assert coupled_t2_epochs(census) == 1
    # 8191 activations leave a residual of 1 for the following T2 epoch
    assert nep_max(T2, d, 1) == 4121
    assert census_total(census, d) == 8191 + 4121
    assert not check_census(census, d, slack=1)


@pytest.mark.parametrize("census, coupled", [
    (EpochCensus(n2=1, n3=1), 0),
    (EpochCensus(n2=1, n4=1), 0),
    (EpochCensus(n0=1, n2=1), 1),
    (EpochCensus(n1=2, n2=2, n3=1), 1),
    (EpochCensus(n0=1, n2=2, n3=2), 0),
])
def test_coupled_t2_epochs(census, coupled):
    assert coupled_t2_epochs(census) == coupled


def test_halved_t_delay_is_sat(repo_file):
    v = verify_unsat(load_config(repo_file("configs/nrh_32k_half_delay.yaml")).derived)
    assert v.satisfiable and v.label == "SAT"
    assert v.witness == EpochCensus(n2=1, n3=1)
    assert v.max_total_acts == 24526
    assert str(v.witness) == "{T2:1, T3:1}"


def test_scaled_verdicts(scaled_cfg, broken_cfg):
    v = verify_unsat(scaled_cfg.derived)
    assert not v.satisfiable and v.max_total_acts == 54
    slack = verify_unsat(scaled_cfg.derived, slack=1)
    assert not slack.satisfiable and slack.max_total_acts == 63
    broken = verify_unsat(broken_cfg.derived)
    assert broken.satisfiable
    assert broken.witness == EpochCensus(n4=2)
    assert broken.max_total_acts == 96


def test_verdict_requires_witness_iff_sat():
    with pytest.raises(ValueError):
        SecurityVerdict(True, None, 100, 64, 2)
    with pytest.raises(ValueError):
        SecurityVerdict(False, EpochCensus(n4=2), 10, 64, 2)


@pytest.fixture
def long_horizon_cfg(scaled_raw):
    # four CBF lifetimes per refresh window: eight epochs
    scaled_raw.update(t_cbf="50us", n_bl=8)
    return build_config(scaled_raw)


@pytest.mark.parametrize("slack", [0, 1])
@pytest.mark.parametrize("cfg_name", ["scaled_cfg", "broken_cfg", "base_cfg", "long_horizon_cfg"])
def test_reduced_search_matches_exhaustive(request, monkeypatch, cfg_name, slack):
    d = request.getfixturevalue(cfg_name).derived
    full = verify_unsat(d, slack)
    monkeypatch.setattr(security, "EXHAUSTIVE_MAX_EPOCHS", 0)
    reduced = verify_unsat(d, slack)
    assert reduced.satisfiable == full.satisfiable
    assert reduced.max_total_acts == full.max_total_acts


def test_long_horizon(long_horizon_cfg):
    d = long_horizon_cfg.derived
    assert horizon_epochs(d) == 8
    assert success_threshold(d) == 16
    v = verify_unsat(d)
    assert v.satisfiable
    assert v.max_total_acts == 60


# ── Epoch orders ──────────────────────────────────────────────────────────────

@pytest.mark.parametrize("census, expected", [
    (EpochCensus(n2=1, n3=1), [T2, T3]),
    (EpochCensus(n4=2), [T4, T4]),
    (EpochCensus(n2=1, n4=1), [T2, T4]),
    (EpochCensus(n0=1, n2=2, n3=2, n4=1), [T0, T2, T4, T3, T2, T3]),
    (EpochCensus(n1=2, n2=2, n3=1), [T1, T1, T2, T3, T2]),
])
def test_census_order(census, expected):
    order = census.order()
    assert order == expected
    assert EpochCensus.is_valid_order(order)
    assert len(order) == census.epochs


def test_invalid_orders():
    assert not EpochCensus.is_valid_order([T2, T2])
    assert not EpochCensus.is_valid_order([T0, T3])
    assert not EpochCensus.is_valid_order([T4, T1])
    assert EpochCensus.is_valid_order([T3, T0, T1, T2, T4, T4, T3])


def test_epoch_type_ranges():
    assert [t.n_pre_range for t in EpochType] == ["< N_BL"] * 3 + [">= N_BL"] * 2
    assert EpochType.T1.n_ep_range == "[N_BL*, N_BL)"


def test_census_to_trace(scaled_cfg):
    d = scaled_cfg.derived
    trace = census_to_trace([T0, T4], scaled_cfg)
    first = [r for r in trace if r.ready_at < d.epoch_len]
    assert len(first) == 2 * 15
    assert all(d.epoch_len <= r.ready_at < 2 * d.epoch_len for r in trace[len(first):])
    assert len(trace) - len(first) == d.epoch_len // 46_250
    assert {r.row for r in trace} == {511, 513}


# ── Cross-validation ──────────────────────────────────────────────────────────

def test_cross_validate_scaled(scaled_cfg):
    report = cross_validate(scaled_cfg, trials=20, seed=1)
    assert report.verdict.label == "UNSAT"
    assert report.candidates == 24
    assert not report.exceeded
    assert report.agrees
    assert report.max_count <= 64
    assert set(report.per_family) == {"greedy", "epoch_straddle", "witness", "greedy_witness", "fuzz"}
    assert report.to_dict()["agrees"] is True


def test_cross_validate_broken(broken_cfg):
    report = cross_validate(broken_cfg, trials=5, seed=1)
    assert report.verdict.label == "SAT"
    assert report.exceeded
    assert report.agrees
    assert report.max_count > 64


def test_t_delay_longer_than_an_epoch_is_exploitable(scaled_raw):
    # n_bl = n_rh_star - 1 pushes t_delay past one epoch: a blacklisted row
    # is never activated again before its counts age out of the active filter
    scaled_raw["n_bl"] = 63
    cfg = build_config(scaled_raw)
    d = cfg.derived
    assert d.t_delay == 197_086_250 > d.epoch_len
    assert epoch_bounds(d) == (62, 62, 63, 0, 0)
    v = verify_unsat(d)
    assert v.satisfiable
    assert v.max_total_acts == 124
    report = cross_validate(cfg, trials=0)
    assert report.per_family["epoch_straddle"] > 64
    assert report.agrees
