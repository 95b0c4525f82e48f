import pytest

from src.throttler import AttackThrottler, RhliCounters, ThrottleMode, ThrottlerConfig


@pytest.fixture
def throttler(scaled_cfg):
    return AttackThrottler(ThrottlerConfig(quota_max=16), scaled_cfg.derived, threads=4, banks=4)


def record(throttler, thread, bank, n):
    for _ in range(n):
        throttler.record_blacklisted_act(thread, bank)


def test_denominator(throttler):
    assert throttler.denominator == 48


def test_rhli_and_quota(throttler):
    assert throttler.quota(0, 0) == 16
    record(throttler, 0, 0, 24)
    assert throttler.rhli(0, 0) == 0.5
    assert throttler.quota(0, 0) == 8
    assert throttler.quota(1, 0) == 16
    record(throttler, 0, 0, 23)
    assert not throttler.exhausted(0, 0)
    assert throttler.quota(0, 0) == 1
    record(throttler, 0, 0, 1)
    assert throttler.exhausted(0, 0)
    assert throttler.quota(0, 0) == 0


def test_counters_saturate(throttler):
    record(throttler, 3, 1, 100)
    assert throttler.counters.active_count(3, 1) == 64


def test_observe_mode_never_restricts(scaled_cfg):
    t = AttackThrottler(ThrottlerConfig(16, ThrottleMode.OBSERVE), scaled_cfg.derived, 4, 4)
    record(t, 0, 0, 60)
    assert t.exhausted(0, 0)
    assert t.quota(0, 0) == 16
    assert not t.enforcing


def test_clear_swaps_per_bank(throttler):
    record(throttler, 0, 0, 10)
    record(throttler, 0, 1, 10)
    throttler.on_clear(0)
    assert throttler.counters.active_count(0, 0) == 10
    throttler.on_clear(0)
    assert throttler.counters.active_count(0, 0) == 0
    assert throttler.counters.active_count(0, 1) == 10


def test_rhli_matrix_and_peak(throttler):
    record(throttler, 1, 2, 24)
    matrix = throttler.rhli_matrix()
    assert matrix[1][2] == 0.5
    assert sum(sum(row) for row in matrix) == 0.5
    throttler.on_clear(2)
    throttler.on_clear(2)
    assert throttler.rhli_matrix()[1][2] == 0
    assert throttler.peak[1, 2] == 0.5


def test_counter_matrix_shape():
    counters = RhliCounters(threads=3, banks=5, saturation=10)
    counters.increment(2, 4)
    assert counters.active_matrix().shape == (3, 5)
    assert counters.active_matrix()[2, 4] == 1


def test_quota_max_must_be_positive():
    with pytest.raises(ValueError):
        ThrottlerConfig(quota_max=0)
