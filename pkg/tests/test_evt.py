from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import gpd_sample
from rrcstorm.evt import (
    DegenerateSample,
    GpdParams,
    MomentViolation,
    NumericOverflow,
    PotConfig,
    PotState,
    PotThresholder,
    SampleClass,
    TailDirection,
    anomaly_threshold,
    compute_r1,
    estimate_gpd_mom,
    initial_threshold,
)


# --- moments -----------------------------------------------------------------


def test_mom_hand_example_round_trips_through_gpd_moments():
    # mean 1 and (n-1) variance 2
    excess = [0.0, 2.0]
    assert np.mean(excess) == 1.0 and np.var(excess, ddof=1) == 2.0
    p = estimate_gpd_mom(excess)
    assert p.gamma == pytest.approx(0.25)
    assert p.sigma == pytest.approx(0.75)
    # GPD mean and variance evaluated at the estimate give back the sample moments
    assert p.sigma / (1 - p.gamma) == pytest.approx(1.0)
    assert p.sigma**2 / ((1 - p.gamma) ** 2 * (1 - 2 * p.gamma)) == pytest.approx(2.0)


def test_mom_recovers_gpd_parameters(rng):
    p = estimate_gpd_mom(gpd_sample(0.2, 1.0, 5000, rng))
    assert 0.1 <= p.gamma <= 0.3
    assert 0.85 <= p.sigma <= 1.15


@pytest.mark.parametrize("excess", [[3.0, 3.0, 3.0], [1.5], []])
def test_mom_degenerate(excess):
    with pytest.raises(DegenerateSample):
        estimate_gpd_mom(excess)


def test_mom_moment_violation_when_mean_vanishes():
    with pytest.raises(MomentViolation):
        estimate_gpd_mom([-1.0, 1.0])


def test_gpd_params_validation():
    with pytest.raises(ValueError):
        GpdParams(0.1, 0.0)
    with pytest.raises(MomentViolation):
        GpdParams(0.5, 1.0)


@given(
    mu=st.floats(0.01, 100.0),
    ratio=st.floats(0.01, 50.0),
)
def test_mom_shape_below_half_and_scale_positive(mu, ratio):
    # two-point samples hit any (mean, variance) pair exactly
    a = math.sqrt(mu * mu / ratio / 2.0)
    p = estimate_gpd_mom([mu - a, mu + a])
    assert p.gamma < 0.5
    assert p.sigma > 0


# --- threshold formula -------------------------------------------------------


def test_threshold_hand_example():
    p = GpdParams(0.25, 0.75)
    got = anomaly_threshold(10.0, p, 1e-3, 10_000, 100)
    # (qN/Nt)^-gamma = 0.1^-0.25 = 10^(1/4)
    oracle = 10.0 + (0.75 / 0.25) * (10.0 ** 0.25 - 1.0)
    assert oracle == pytest.approx(12.335, abs=5e-4)
    assert got == pytest.approx(oracle, rel=1e-12)


def test_threshold_lower_tail_mirrors_upper():
    p = GpdParams(0.25, 0.75)
    got = anomaly_threshold(1.0, p, 1e-3, 10_000, 100, TailDirection.LOWER)
    assert got == pytest.approx(1.0 - (12.335 - 10.0), abs=5e-4)


def test_threshold_exponential_limit():
    p = GpdParams(0.0, 2.0)
    got = anomaly_threshold(5.0, p, 1e-3, 10_000, 100)
    assert got == pytest.approx(5.0 + 2.0 * math.log(100 / (1e-3 * 10_000)))


@pytest.mark.parametrize("gamma", [1e-6, -1e-6, 9.9e-7])
def test_threshold_continuous_near_zero_shape(gamma):
    exp_form = anomaly_threshold(5.0, GpdParams(0.0, 2.0), 1e-3, 10_000, 100)
    general = anomaly_threshold(5.0, GpdParams(gamma, 2.0), 1e-3, 10_000, 100)
    assert general == pytest.approx(exp_form, rel=1e-6)


def test_threshold_overflow_is_reported():
    with pytest.raises(NumericOverflow):
        anomaly_threshold(0.0, GpdParams(0.49, 1e308), 1e-9, 10, 10)


@pytest.mark.parametrize("n_total,n_peaks", [(10, 0), (5, 10)])
def test_threshold_rejects_bad_counts(n_total, n_peaks):
    with pytest.raises(ValueError):
        anomaly_threshold(0.0, GpdParams(0.1, 1.0), 1e-3, n_total, n_peaks)


params = st.builds(GpdParams, gamma=st.floats(-2.0, 0.49), sigma=st.floats(1e-3, 1e3))


@given(
    p=params,
    t=st.floats(-1e3, 1e3),
    q1=st.floats(1e-7, 1e-2),
    q2=st.floats(1e-7, 1e-2),
    n=st.integers(100, 100_000),
    frac=st.floats(0.01, 0.2),
)
def test_threshold_monotone_in_q_and_ordered(p, t, q1, q2, n, frac):
    n_peaks = max(1, int(n * frac))
    lo_q, hi_q = sorted((q1, q2))
    up_lo = anomaly_threshold(t, p, lo_q, n, n_peaks)
    up_hi = anomaly_threshold(t, p, hi_q, n, n_peaks)
    dn_lo = anomaly_threshold(t, p, lo_q, n, n_peaks, TailDirection.LOWER)
    dn_hi = anomaly_threshold(t, p, hi_q, n, n_peaks, TailDirection.LOWER)
    tol = 1e-9 * max(1.0, abs(t), p.sigma)
    assert up_hi <= up_lo + tol
    assert dn_hi >= dn_lo - tol
    if hi_q * n / n_peaks < 1:
        assert up_hi >= t - tol
        assert dn_hi <= t + tol


# --- initial threshold and r1 ------------------------------------------------


def test_initial_threshold_nearest_rank():
    window = np.arange(1, 101)
    # brute force: the smallest value with at most 2% of the window strictly above it
    oracle = min(v for v in window if np.sum(window > v) <= 0.02 * (len(window) - 1))
    assert initial_threshold(window, 0.98) == oracle == 99


def test_initial_threshold_constant_and_singleton():
    assert initial_threshold([1.0] * 50, 0.3) == 1.0
    assert initial_threshold([4.0], 0.98, "lower") == 4.0


def test_initial_threshold_low_quantile_rank_count(rng):
    window = rng.random(18_000)
    t = initial_threshold(window, 0.001, TailDirection.LOWER)
    below = int(np.sum(window < t))
    assert below <= 18
    assert below >= 16


@pytest.mark.parametrize("msg3,msg5,expected", [(8, 8, 1.0), (0, 0, 1.0), (100, 3, 0.03), (2, 5, 1.0)])
def test_compute_r1(msg3, msg5, expected):
    assert compute_r1(msg3, msg5) == pytest.approx(expected)


def test_compute_r1_rejects_negative():
    with pytest.raises(ValueError):
        compute_r1(-1, 0)


# --- streaming machine -------------------------------------------------------


def small_cfg(**kw) -> PotConfig:
    base = dict(window_len=200, gap_len=10, q=1e-3, init_quantile=0.98)
    base.update(kw)
    return PotConfig(**base)


def bootstrapped(cfg: PotConfig, values) -> PotState:
    state = PotState(cfg)
    for v in values[: cfg.bootstrap_len]:
        assert state.update(v) is None
    assert state.ready
    return state


def test_bootstrap_emits_nothing_then_classifies(rng):
    cfg = small_cfg()
    state = PotState(cfg)
    out = [state.update(v) for v in rng.exponential(size=cfg.bootstrap_len + 5)]
    assert out[: cfg.bootstrap_len] == [None] * cfg.bootstrap_len
    assert all(isinstance(c, SampleClass) for c in out[cfg.bootstrap_len:])
    with pytest.raises(RuntimeError):
        PotState(cfg).classify(1.0)


def test_minimum_peak_count_after_bootstrap(rng):
    cfg = small_cfg(window_len=100, init_quantile=0.99)
    state = bootstrapped(cfg, rng.exponential(size=200))
    assert state.excesses.size >= cfg.min_peaks


def test_anomaly_leaves_threshold_and_window_untouched(rng):
    state = bootstrapped(small_cfg(), rng.exponential(size=300))
    before_th, before_win = state.t_anomaly, state.window.copy()
    assert state.update(1e6) is SampleClass.ANOMALY
    assert state.t_anomaly == before_th
    np.testing.assert_array_equal(state.window, before_win)


def test_normal_value_keeps_threshold(rng):
    cfg = small_cfg()
    values = rng.exponential(size=cfg.bootstrap_len)
    # the value about to enter the window and the one about to leave it are both small
    values[0] = values[cfg.window_len] = 0.0
    state = bootstrapped(cfg, values)
    before = state.t_anomaly
    assert state.update(0.0) is SampleClass.NORMAL
    assert state.t_anomaly == before


def test_extreme_value_triggers_refit(rng):
    cfg = small_cfg(gap_len=0)
    state = bootstrapped(cfg, rng.exponential(size=cfg.bootstrap_len))
    value = (state.t + state.t_anomaly) / 2
    before = state.t_anomaly
    assert state.update(value) is SampleClass.EXTREME
    assert state.t_anomaly != before


def _trajectory(state: PotState, values) -> list:
    out = []
    for v in values:
        state.update(v)
        out.append(state.t_anomaly)
    return out


def test_outlier_never_reaches_window_without_censoring(rng):
    cfg = small_cfg(censor=False)
    values = rng.exponential(size=1500)
    boot, rest = values[: cfg.bootstrap_len], values[cfg.bootstrap_len:]
    clean = bootstrapped(cfg, boot)
    dirty = bootstrapped(cfg, boot)
    ref = _trajectory(clean, rest[:100])
    _trajectory(dirty, rest[:100])
    assert dirty.update(1e9) is SampleClass.ANOMALY
    np.testing.assert_allclose(_trajectory(dirty, rest[100:]), _trajectory(clean, rest[100:]), rtol=1e-12)
    assert ref  # sanity


def test_censored_outlier_only_affects_thresholds_while_in_span(rng):
    cfg = small_cfg()
    values = rng.exponential(size=1500)
    boot, rest = values[: cfg.bootstrap_len], values[cfg.bootstrap_len:]
    clean = bootstrapped(cfg, boot)
    dirty = bootstrapped(cfg, boot)
    _trajectory(clean, rest[:100])
    _trajectory(dirty, rest[:100])
    assert dirty.update(1e9) is SampleClass.ANOMALY
    a = _trajectory(clean, rest[100:])
    b = _trajectory(dirty, rest[100:])
    span = cfg.gap_len + cfg.window_len
    # the value itself never enters the window
    assert 1e9 not in dirty.window
    np.testing.assert_array_equal(dirty.window, clean.window)
    # once the placeholder expires the two runs rejoin at the next successful
    # fit (a failed fit keeps the previous threshold) and stay together
    diff = np.flatnonzero(np.asarray(a) != np.asarray(b))
    assert diff.size and diff[0] < span
    assert diff[-1] < 2 * span


def test_censoring_keeps_threshold_from_drifting_down(rng):
    # dropping anomalies without trace truncates the tail and the threshold walks down
    values = rng.exponential(size=40_000)
    rates = {}
    for censor in (True, False):
        state = PotState(small_cfg(window_len=1000, gap_len=30, censor=censor))
        classes = [state.update(v) for v in values]
        tail = classes[-20_000:]
        rates[censor] = sum(c is SampleClass.ANOMALY for c in tail) / len(tail)
    assert rates[True] < rates[False]
    assert rates[True] < 5e-3


def test_lower_tail_bounds_clamp(rng):
    cfg = PotConfig(window_len=500, gap_len=10, q=1e-3, init_quantile=0.02, direction="lower", bounds=(0.0, 1.0))
    values = np.clip(1 - rng.exponential(0.3, size=2000), 0, 1)
    state = PotState(cfg)
    for v in values:
        state.update(v)
        if state.ready:
            assert 0.0 <= state.t_anomaly <= 1.0
            assert state.t_anomaly <= state.t


def test_no_excess_means_no_anomaly():
    cfg = PotConfig(window_len=50, gap_len=0, q=1e-3, init_quantile=0.02, direction="lower", bounds=(0.0, 1.0))
    state = bootstrapped(cfg, [1.0] * 50)
    # nothing below the constant window, so the threshold collapses to the lower bound
    assert state.t_anomaly == 0.0
    assert state.update(0.5) is SampleClass.EXTREME


@given(st.lists(st.floats(0, 50, allow_nan=False), min_size=260, max_size=400), st.integers(0, 150))
def test_snapshot_round_trip_continues_identically(values, cut):
    cfg = small_cfg(window_len=200, gap_len=10, q=1e-2)
    a = PotState(cfg)
    for v in values[: cfg.bootstrap_len + cut // 3]:
        a.update(v)
    b = PotState.from_dict(a.to_dict())
    for v in values[cfg.bootstrap_len + cut // 3:]:
        assert a.update(v) == b.update(v)
        assert a.t_anomaly == b.t_anomaly


@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=215, max_size=300))
def test_upper_state_invariants(values):
    state = PotState(small_cfg(window_len=200, gap_len=10))
    for v in values:
        cls = state.update(v)
        if state.ready:
            assert state.t_anomaly >= state.t
            assert len(state.window) <= 200
            if cls is SampleClass.ANOMALY:
                assert v >= state.t_anomaly


def test_config_validation():
    with pytest.raises(ValueError):
        PotConfig(window_len=0, gap_len=0, q=1e-3, init_quantile=0.98)
    with pytest.raises(ValueError):
        PotConfig(window_len=10, gap_len=0, q=0.5, init_quantile=0.98)
    with pytest.raises(ValueError):
        PotConfig(window_len=10, gap_len=0, q=1e-3, init_quantile=1e-4, direction="lower")
    with pytest.raises(ValueError):
        PotConfig(window_len=10, gap_len=0, q=1e-3, init_quantile=0.98, bounds=(1, 0))


def test_estimator_api(rng):
    x = rng.exponential(size=800)
    est = PotThresholder(window_len=200, gap_len=10, q=1e-3).fit(x[:400])
    pred = est.predict(np.concatenate([x[400:], [1e6]]))
    assert pred.shape == (401,)
    assert pred[-1] == 1
    assert set(np.unique(pred)) <= {0, 1}
    assert est.get_params()["window_len"] == 200
    with pytest.raises(RuntimeError):
        PotThresholder().predict(x)
