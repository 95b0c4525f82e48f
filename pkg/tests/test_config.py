from dataclasses import replace
from fractions import Fraction

import pytest

from src.config import (
    BlastProfile, ConfigError, build_config, compute_history_capacity, compute_nrh_star,
    config_hash, default_seed, derived_rows, lifetime_activation_bound, load_config,
    parse_duration, with_t_delay,
)


def test_32k_derivation(base_cfg):
    d = base_cfg.derived
    assert d.n_rh_star == 16384
    assert 7_700_000 <= d.t_delay <= 7_800_000
    assert d.t_delay == 7_766_250
    assert d.history_capacity == 888
    assert d.epoch_len == 32_000_000_000
    assert d.counter_saturation == 8192
    assert d.throttle_saturation == 16384
    assert d.lifetime_bound == 16384


def test_many_sided_threshold_ratio():
    n_rh_star = compute_nrh_star(32768, BlastProfile.geometric(6))
    assert n_rh_star == 8322
    assert n_rh_star / 32768 == pytest.approx(0.2539, abs=2e-4)


def test_flat_format_matches_yaml(base_cfg, repo_file):
    flat = load_config(repo_file("configs/nrh_32k.cfg"))
    assert flat.derived == base_cfg.derived
    assert flat.params == base_cfg.params


@pytest.mark.parametrize("name, n_rh_star, t_delay, history", [
    ("nrh_32k", 16384, 7_766_250, 888),
    ("nrh_16k", 8192, 15_578_750, 1781),
    ("nrh_8k", 4096, 31_203_750, 3567),
    ("nrh_4k", 2048, 62_453_750, 7138),
    ("nrh_2k", 1024, 124_953_750, 14281),
    ("nrh_1k", 512, 249_953_750, 28567),
])
def test_per_threshold_configs(repo_file, name, n_rh_star, t_delay, history):
    d = load_config(repo_file(f"configs/{name}.yaml")).derived
    assert d.n_rh_star == n_rh_star
    assert d.n_bl == n_rh_star // 2
    assert d.t_delay == t_delay
    assert d.history_capacity == history


def test_scaled_config(scaled_cfg):
    d = scaled_cfg.derived
    assert d.n_rh_star == 64
    assert d.n_bl == 16
    assert d.t_delay == 4_151_250
    assert d.history_capacity == 475
    assert d.epoch_len == 100_000_000
    assert d.lifetime_bound == 64
    assert d.throttle_denominator == 48


def test_t_delay_override(broken_cfg, scaled_cfg):
    assert broken_cfg.derived.t_delay == 2_075_625
    assert broken_cfg.derived.history_capacity == 238
    assert broken_cfg.derived.n_rh_star == scaled_cfg.derived.n_rh_star


def test_with_t_delay_recomputes_history(scaled_cfg):
    cfg = with_t_delay(scaled_cfg, 2_075_625)
    assert cfg.derived.t_delay == 2_075_625
    assert cfg.derived.history_capacity == compute_history_capacity(2_075_625, 35_000)
    assert scaled_cfg.derived.t_delay == 4_151_250


def test_lifetime_activation_bound_meets_threshold(base_cfg, scaled_cfg):
    # n_bl fast activations plus t_delay pacing fill exactly one scaled threshold
    assert lifetime_activation_bound(base_cfg.derived) == 16384
    assert lifetime_activation_bound(scaled_cfg.derived) == 64


def test_identity_when_t_cbf_equals_t_refw(base_cfg):
    d = base_cfg.derived
    assert d.t_cbf == d.t_refw
    assert d.lifetime_bound == d.n_rh_star


@pytest.mark.parametrize("text, ps", [
    ("46.25ns", 46_250),
    ("35 ns", 35_000),
    ("64ms", 64_000_000_000),
    ("200us", 200_000_000),
    ("2075625ps", 2_075_625),
    ("1234", 1234),
    (7, 7),
])
def test_parse_duration(text, ps):
    assert parse_duration(text) == ps


@pytest.mark.parametrize("bad", ["1.5ps", "abc", "10 s", True])
def test_parse_duration_rejects(bad):
    with pytest.raises(ConfigError):
        parse_duration(bad)


def test_unknown_key(scaled_raw):
    scaled_raw["t_rcd"] = "13ns"
    with pytest.raises(ConfigError, match="unknown config keys: t_rcd"):
        build_config(scaled_raw)


def test_missing_key(scaled_raw):
    del scaled_raw["n_bl"]
    with pytest.raises(ConfigError, match="n_bl"):
        build_config(scaled_raw)


@pytest.mark.parametrize("key, value", [
    ("n_bl", 64),                        # not below n_rh_star
    ("n_bl", 0),
    ("t_cbf", "300us"),                  # longer than t_refw
    ("t_cbf", "199999999ps"),            # odd: epochs would not be whole picoseconds
    ("cbf_counters", 1000),              # not a power of two
    ("impact_factors", [1, "1/2"]),      # length differs from blast_radius
    ("impact_factors", ["1/2"] * 6),     # c_1 must be 1
    ("t_delay_override", "40ns"),        # not above t_rc
    ("para_failure_target", 2),
    ("threads", 0),
])
def test_invalid_values(scaled_raw, key, value):
    scaled_raw[key] = value
    with pytest.raises(ConfigError):
        build_config(scaled_raw)


def test_default_impact_factors_are_geometric(scaled_raw):
    del scaled_raw["impact_factors"]
    cfg = build_config(scaled_raw)
    assert cfg.params.blast.impact_factors == tuple(Fraction(1, 2 ** k) for k in range(6))
    assert cfg.derived.n_rh_star == 64


def test_count_suffix(base_cfg):
    assert base_cfg.params.n_rh == 32768
    assert base_cfg.params.n_bl == 8192


def test_config_hash(base_cfg, scaled_cfg, broken_cfg):
    assert config_hash(base_cfg) == config_hash(replace(base_cfg, source="elsewhere.yaml"))
    assert len({config_hash(base_cfg), config_hash(scaled_cfg), config_hash(broken_cfg)}) == 3


def test_derived_rows(scaled_cfg):
    rows = derived_rows(scaled_cfg)
    assert rows[0] == ["parameter", "value"]
    table = dict(rows[1:])
    assert table["t_delay_ps"] == 4_151_250
    assert table["n_rh_star"] == 64


def test_env_overrides(monkeypatch, repo_file):
    monkeypatch.setenv("RHSIM_CONFIG", repo_file("configs/scaled.yaml"))
    monkeypatch.setenv("RHSIM_SEED", "42")
    assert load_config().derived.n_rh_star == 64
    assert default_seed() == 42


def test_invalid_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("t_rc: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(str(path))


def test_flat_format_needs_equals(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("t_rc 46.25ns\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        load_config(str(path))


def test_nrh_star_shrinks_with_blast_radius():
    stars = [compute_nrh_star(32768, BlastProfile.geometric(r)) for r in range(1, 9)]
    assert stars[0] == 16384
    assert all(b <= a for a, b in zip(stars, stars[1:]))


@pytest.mark.parametrize("n_rh", [1024, 32768])
def test_nrh_star_shrinks_as_impact_factors_grow(n_rh):
    previous = None
    for c3 in (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(15, 16)):
        blast = BlastProfile(3, (Fraction(1), Fraction(1, 2), c3))
        blast.validate()
        star = compute_nrh_star(n_rh, blast)
        if previous is not None:
            assert star <= previous
        previous = star
    assert previous < compute_nrh_star(n_rh, BlastProfile.geometric(3))
