import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specarb.errors import ValidationError, WarmupError
from specarb.features import (
    Bar,
    FeatureConfig,
    FeatureTracker,
    IndicatorSpec,
    assemble_state,
    bollinger,
    ema,
    indicator,
    log_returns,
    raw_features,
    rsi,
    sma,
    zscore_clamp,
)


def ref_sma(p, w):
    return math.fsum(p[-w:]) / w


def ref_ema(p, w):
    # closed form of the recurrence seeded by the first value
    a = 2 / (w + 1)
    n = len(p)
    terms = [(1 - a) ** (n - 1) * p[0]] + [a * (1 - a) ** (n - 1 - i) * p[i] for i in range(1, n)]
    return math.fsum(terms)


def ref_bollinger(p, w, k):
    x = p[-w:]
    m = math.fsum(x) / w
    sd = math.sqrt(math.fsum((v - m) ** 2 for v in x) / w)
    return m + k * sd, m - k * sd


def ref_rsi(p, w):
    x = p[-w:]
    gains = losses = 0.0
    for a, b in zip(x, x[1:]):
        if b > a:
            gains += b - a
        else:
            losses += a - b
    if gains == 0 and losses == 0:
        return 50.0
    if losses == 0:
        return 100.0
    return 100 * gains / (gains + losses)


def series(seed, n=1000):
    g = np.random.default_rng(seed)
    return list(100 + np.cumsum(g.normal(size=n)))


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("w", [2, 10, 14, 50])
def test_indicators_match_brute_force(seed, w):
    p = series(seed)
    assert sma(p, w) == pytest.approx(ref_sma(p, w), abs=1e-9)
    assert ema(p, w) == pytest.approx(ref_ema(p, w), abs=1e-9)
    for got, want in zip(bollinger(p, w, 2.0), ref_bollinger(p, w, 2.0)):
        assert got == pytest.approx(want, abs=1e-9)
    assert rsi(p, w) == pytest.approx(ref_rsi(p, w), abs=1e-9)


def test_indicator_hand_values():
    p = [1.0, 2.0, 3.0, 4.0]
    assert sma(p, 2) == 3.5
    assert ema([1.0, 3.0, 3.0], 3) == 2.5
    up, lo = bollinger([1.0, 3.0], 2, 1.0)
    assert (up, lo) == (3.0, 1.0)
    assert rsi([1.0, 2.0, 1.5], 3) == pytest.approx(100 * 1 / 1.5)
    assert rsi([5.0] * 5, 5) == 50.0
    assert rsi([1.0, 2.0, 3.0], 3) == 100.0
    assert rsi([3.0, 2.0, 1.0], 3) == 0.0


def test_constant_series_properties():
    p = [7.0] * 30
    assert sma(p, 10) == 7.0 and ema(p, 10) == 7.0
    assert bollinger(p, 10) == (7.0, 7.0)
    assert np.array_equal(log_returns(p, 3), np.zeros(3))


def test_log_returns_newest_first():
    r = log_returns([1.0, 2.0, 8.0], 2)
    assert r == pytest.approx([math.log(4), math.log(2)])
    with pytest.raises(WarmupError):
        log_returns([1.0, 2.0], 2)
    with pytest.raises(ValidationError):
        log_returns([1.0, 0.0, 2.0], 2)


def test_warmup_errors():
    for f in (sma, ema, rsi):
        with pytest.raises(WarmupError):
            f([1.0, 2.0], 3)
    with pytest.raises(WarmupError):
        bollinger([1.0], 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1.0, 1000.0), min_size=20, max_size=60), st.integers(2, 20))
def test_indicator_bounds(prices, w):
    lo, hi = min(prices[-w:]), max(prices[-w:])
    assert lo - 1e-9 <= sma(prices, w) <= hi + 1e-9
    assert min(prices) - 1e-9 <= ema(prices, w) <= max(prices) + 1e-9
    up, low = bollinger(prices, w)
    assert up >= sma(prices, w) - 1e-9 >= low - 2e-9
    assert 0.0 <= rsi(prices, w) <= 100.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 100.0), min_size=20, max_size=40), st.floats(0.1, 10.0), st.floats(-50.0, 50.0))
def test_rsi_affine_invariant(prices, scale, shift):
    moved = [scale * p + shift for p in prices]
    assert rsi(moved, 10) == pytest.approx(rsi(prices, 10), abs=1e-6)


def test_indicator_spec_parsing():
    assert IndicatorSpec.parse("sma:10") == IndicatorSpec("sma", 10)
    assert IndicatorSpec.parse("bollinger:20:2.5") == IndicatorSpec("bollinger", 20, 2.5)
    assert str(IndicatorSpec.parse("bollinger:20:2")) == "bollinger:20:2"
    for bad in ("macd:5", "sma", "sma:x", "rsi:1", "bollinger:5:2:1"):
        with pytest.raises(ValidationError):
            IndicatorSpec.parse(bad)
    assert indicator("bollinger:3:1", [1.0, 2.0, 3.0]).shape == (2,)


def test_feature_config_dimensions():
    cfg = FeatureConfig()
    assert cfg.state_dim == 4 + 5 + 2
    assert cfg.min_prices == 20
    assert cfg.history_needed == 119
    with pytest.raises(ValidationError):
        FeatureConfig(zscore_window=1)


def test_raw_features_layout():
    cfg = FeatureConfig(n_returns=2, indicators=("sma:3",), zscore_window=2)
    v = raw_features([1.0, 2.0, 4.0], 10.0, 0.5, cfg)
    assert v == pytest.approx([math.log(2), math.log(2), 7 / 3, 10.0, 0.5])


def test_zscore_clamp():
    w = np.array([[0.0, 1.0, 5.0], [0.0, 1.0, 5.0], [3.0, 1.0, 5.0 + 1e-12]])
    z = zscore_clamp(w, 1.2)
    # first column: mean 1, pop sd sqrt(2), z = 2 / sqrt(2) clamped
    assert z[0] == 1.2
    assert z[1] == 0.0 and z[2] == 0.0
    assert zscore_clamp(w, 5.0)[0] == pytest.approx(math.sqrt(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 5.0))
def test_zscore_clamp_bounded(seed, clamp):
    w = np.random.default_rng(seed).standard_cauchy(size=(20, 4))
    z = zscore_clamp(w, clamp)
    assert np.all(np.abs(z) <= clamp) and np.all(np.isfinite(z))


def test_tracker_matches_assemble_state():
    cfg = FeatureConfig(n_returns=3, indicators=("ema:5", "rsi:6", "bollinger:4:2"), zscore_window=8)
    g = np.random.default_rng(3)
    prices = list(100 + np.cumsum(g.normal(size=40)))
    bars = [Bar(i, p - 0.1, p + 0.1 + 0.01 * i, 1000 + i) for i, p in enumerate(prices)]
    tracker = FeatureTracker(cfg)
    for i, (p, b) in enumerate(zip(prices, bars)):
        tracker.update(p, b.volume, b.ask - b.bid)
        if i + 1 < cfg.history_needed:
            assert not tracker.ready
            with pytest.raises(WarmupError):
                tracker.state()
        else:
            s = tracker.state()
            assert s.shape == (cfg.state_dim,)
            assert np.array_equal(s, assemble_state(bars[: i + 1], prices[: i + 1], cfg))


def test_log_returns_brute_force():
    p = list(np.random.default_rng(1).uniform(0.5, 2.0, size=30))
    got = log_returns(p, 10)
    want = [math.log(p[-1 - i] / p[-2 - i]) for i in range(10)]
    assert got == pytest.approx(want, abs=1e-15)
    assert log_returns([1.0, math.e], 1) == pytest.approx([1.0])


def test_strictly_increasing_rsi_is_100():
    assert rsi(list(range(1, 30)), 14) == 100.0


def test_state_layout_returns_indicators_volume_spread():
    cfg = FeatureConfig(n_returns=4, indicators=("sma:5", "rsi:5", "bollinger:5:2"), zscore_window=3)
    assert cfg.n_indicator_outputs == 4 and cfg.state_dim == 10
    p = list(100 + np.cumsum(np.random.default_rng(2).normal(size=12)))
    v = raw_features(p, 123.0, 0.25, cfg)
    assert v.shape == (10,)
    assert np.array_equal(v[:4], log_returns(p, 4))
    assert v[4] == sma(p, 5) and v[5] == rsi(p, 5)
    assert tuple(v[6:8]) == bollinger(p, 5, 2.0)
    assert tuple(v[8:]) == (123.0, 0.25)


def test_constant_prices_give_zero_state():
    cfg = FeatureConfig(n_returns=2, indicators=("ema:3", "bollinger:4:2"), zscore_window=5)
    tracker = FeatureTracker(cfg)
    for _ in range(cfg.history_needed):
        tracker.update(50.0, 10.0, 0.1)
    assert np.array_equal(tracker.state(), np.zeros(cfg.state_dim))


def test_outlier_saturates_clamp():
    w = np.vstack([np.random.default_rng(0).normal(size=(99, 2)), [[100.0, -100.0]]])
    w[:-1] -= w[:-1].mean(axis=0)
    w[:-1] /= w[:-1].std(axis=0)
    assert np.array_equal(zscore_clamp(w, 5.0), [5.0, -5.0])
