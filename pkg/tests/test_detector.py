from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from rrcstorm.detector import (
    AlertTracker,
    DecisionClass,
    DetectorConfig,
    DetectorState,
    StormDetector,
    Verdict,
    default_msg3_pot,
    default_r1_pot,
    detect,
    differentiate,
    run,
    step,
)
from rrcstorm.evaluation import score
from rrcstorm.evt import PotConfig, TailDirection
from rrcstorm.storm import EpisodeKind, EpisodeSpec
from rrcstorm.synth import DEFAULT_START_TS, ScenarioConfig, synth_scenario
from rrcstorm.trace import Trace, TrafficSample


def small_config(**kw) -> DetectorConfig:
    msg3 = PotConfig(60, 10, 1e-3, 0.9, TailDirection.UPPER, censor=False, support_fallback=False)
    r1 = PotConfig(300, 10, 1e-4, 0.05, TailDirection.LOWER, bounds=(0.0, 1.0), censor=False, support_fallback=False)
    return DetectorConfig(msg3_pot=msg3, r1_pot=r1, **kw)


def quiet_trace(n: int, seed: int = 0, start: int = 0) -> Trace:
    """Poisson(5) Msg3 with rare single failures: well inside both thresholds."""
    rng = np.random.default_rng(seed)
    msg3 = rng.poisson(5.0, n) + 1
    fail = (rng.random(n) < 0.05).astype(int)
    return Trace(np.arange(start, start + n), msg3, msg3 - fail, np.full(n, 40))


def warmed(cfg: DetectorConfig, n: int = 400) -> DetectorState:
    state = DetectorState(cfg)
    for s in quiet_trace(n):
        step(state, s)
    assert state.ready
    return state


# differentiator -------------------------------------------------------------


def test_differentiate_rising_to_one_is_highload():
    r2 = list(np.linspace(0.5, 1.0, 20)) + [1.0] * 20
    assert differentiate(r2) is Verdict.HIGHLOAD


def test_differentiate_flat_is_attack():
    assert differentiate([0.4] * 30) is Verdict.ATTACK
    assert differentiate([0.4] * 10) is Verdict.PENDING
    assert differentiate([0.4] * 10, closed=True) is Verdict.ATTACK


def test_differentiate_saturated_from_onset():
    assert differentiate([1.0]) is Verdict.HIGHLOAD


def test_differentiate_requires_non_decreasing_run():
    # reaching the level after a dip inside the look-back is not a fill-up
    r2 = [0.9, 0.5, 0.995]
    assert differentiate(r2, horizon=3) is Verdict.ATTACK
    assert differentiate(r2, horizon=2) is Verdict.HIGHLOAD


# alert tracker --------------------------------------------------------------


def test_tracker_opens_on_second_consecutive_positive():
    tr = AlertTracker(confirm_count=2)
    assert tr.push(10, True, 30) is None
    alert = tr.push(11, True, 30)
    assert alert is not None and alert.onset_ts == 10 and alert.detect_ts == 11
    assert tr.push(12, False, 30) is alert
    closed = tr.push(13, False, 30)
    assert closed is alert and closed.end_ts == 11
    assert not tr.in_alert
    assert tr.finish(13) == [alert]


def test_tracker_isolated_positives_never_alert():
    tr = AlertTracker(confirm_count=2)
    for i in range(100):
        assert tr.push(i, i % 2 == 0, 30) is None
    assert tr.finish(99) == []


@settings(max_examples=60)
@given(
    pattern=st.lists(st.booleans(), min_size=1, max_size=300),
    r2=st.lists(st.integers(0, 300), min_size=1, max_size=300),
    confirm=st.integers(1, 4),
)
def test_tracker_invariants(pattern, r2, confirm):
    tr = AlertTracker(confirm_count=confirm)
    for i, pos in enumerate(pattern):
        tr.push(i, pos, r2[i % len(r2)])
        assert len([a for a in tr.alerts if a.end_ts is None]) == 0
    alerts = tr.finish(len(pattern) - 1)
    ids = [a.alert_id for a in alerts]
    assert ids == list(range(1, len(alerts) + 1))
    for a in alerts:
        assert a.detect_ts >= a.onset_ts
        assert a.verdict in (Verdict.ATTACK, Verdict.HIGHLOAD)
    for a, b in zip(alerts, alerts[1:]):
        assert a.end_ts < b.onset_ts


# streaming detector ---------------------------------------------------------


def test_bootstrap_then_ready():
    cfg = small_config()
    decisions = list(run(quiet_trace(400), cfg))
    boot = [d for d in decisions if d.cls is DecisionClass.BOOTSTRAP]
    assert len(boot) == cfg.r1_pot.bootstrap_len
    assert all(d.alert_id is None for d in decisions)


def test_msg3_spike_with_complete_r1_is_not_positive():
    state = warmed(small_config())
    t = state.last_ts
    for i in range(1, 6):
        d = step(state, TrafficSample(t + i, 80, 80, 40))
        assert d.cls is DecisionClass.MSG3
        assert d.alert_id is None
    assert state.alerts == [] and not state.tracker.in_alert


def test_isolated_positive_second_raises_no_alert():
    state = warmed(small_config())
    t = state.last_ts
    d = step(state, TrafficSample(t + 1, 80, 0, 40))
    assert d.cls is DecisionClass.POSITIVE and d.alert_id is None
    for i in range(2, 10):
        d = step(state, TrafficSample(t + i, 5, 5, 40))
        assert d.alert_id is None
    assert state.tracker.finish(state.last_ts) == []


def test_storm_opens_attack_alert():
    state = warmed(small_config())
    t = state.last_ts
    out = [step(state, TrafficSample(t + i, 80, 0, 40)) for i in range(1, 40)]
    assert out[0].alert_id is None
    assert out[1].alert_id == 1
    assert out[-1].verdict is Verdict.ATTACK
    alerts = state.tracker.finish(state.last_ts)
    assert len(alerts) == 1 and alerts[0].onset_ts == t + 1


def test_storm_with_saturating_r2_is_highload():
    state = warmed(small_config())
    t = state.last_ts
    for i in range(1, 40):
        step(state, TrafficSample(t + i, 80, 0, min(40 + 20 * i, 300)))
    (alert,) = state.tracker.finish(state.last_ts)
    assert alert.verdict is Verdict.HIGHLOAD


def test_thresholds_frozen_during_alert():
    state = warmed(small_config())
    t = state.last_ts
    out = [step(state, TrafficSample(t + i, 80, 0, 40)) for i in range(1, 200)]
    assert len({d.th_msg3 for d in out}) == 1
    assert len({d.th_r1 for d in out}) == 1


def test_timestamp_gap_rejected():
    state = warmed(small_config())
    with pytest.raises(ValueError, match="advance by 1"):
        step(state, TrafficSample(state.last_ts + 2, 5, 5, 40))


def test_chunked_run_equals_whole_run():
    trace = quiet_trace(900, seed=3)
    trace.msg3[600:620] += 90
    trace.msg5[600:620] = 0
    cfg = small_config()
    whole, alerts = detect(trace, cfg)
    state = DetectorState(cfg)
    parts = list(run(trace[:500], state=state)) + list(run(trace[500:], state=state))
    assert [(d.ts, d.cls, d.th_msg3, d.th_r1, d.alert_id) for d in parts] == [
        (d.ts, d.cls, d.th_msg3, d.th_r1, d.alert_id) for d in whole
    ]
    assert [a.to_dict() for a in state.tracker.finish(state.last_ts)] == [a.to_dict() for a in alerts]


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(exclusion="sometimes")
    with pytest.raises(ValueError):
        DetectorConfig(confirm_count=0)
    with pytest.raises(ValueError):
        DetectorConfig(r2_highload_level=1.5)
    with pytest.raises(ValueError):
        DetectorConfig(features=("msg5",))


def test_default_windows():
    assert default_msg3_pot().bootstrap_len == 210
    assert default_r1_pot().bootstrap_len == 18060
    assert default_r1_pot().bounds == (0.0, 1.0)


# estimator interface --------------------------------------------------------


def test_estimator_fit_predict():
    det = StormDetector(msg3_window=60, msg3_gap=10, msg3_quantile=0.9, r1_window=300, r1_gap=10, r1_quantile=0.05)
    clone(det)
    assert det.get_params()["r1_window"] == 300
    det.fit(quiet_trace(400).to_array())
    X = np.array([[80, 0, 40]] * 20 + [[5, 5, 40]] * 20)
    y = det.predict(X)
    assert y.shape == (40,)
    assert y[0] == 0 and y[1:20].all() and not y[25:].any()
    assert len(det.alerts_) == 1


def test_estimator_requires_fit():
    with pytest.raises(RuntimeError):
        StormDetector().predict(np.zeros((3, 3)))


# end-to-end properties ------------------------------------------------------


@pytest.fixture(scope="module")
def single_attack():
    start = DEFAULT_START_TS + 86400 + 15 * 3600 + 15 * 60
    cfg = ScenarioConfig(seed=2, days=2, episodes=[EpisodeSpec(EpisodeKind.ATTACK, 100.0, start, 900)])
    trace, labels, _ = synth_scenario(cfg)
    return trace, labels, start


def _threshold_shift(trace, start, exclusion):
    decisions, _ = detect(trace, DetectorConfig(exclusion=exclusion))
    i0 = start - int(trace.ts[0])
    before, after = decisions[i0 - 1], decisions[i0 + 900 + 5]
    return abs(after.th_msg3 - before.th_msg3), abs(after.th_r1 - before.th_r1)


def test_exclusion_keeps_thresholds_stable(single_attack):
    trace, _, start = single_attack
    d3, dr = _threshold_shift(trace, start, "union")
    n3, nr = _threshold_shift(trace, start, "none")
    assert d3 < n3
    assert dr <= nr


def test_single_attack_one_alert_quickly(single_attack):
    trace, labels, start = single_attack
    _, alerts = detect(trace)
    assert len(alerts) == 1
    assert 0 <= alerts[0].detect_ts - start <= 6
    assert alerts[0].verdict is Verdict.ATTACK


def test_conjunction_has_fewest_false_positives():
    trace, labels, _ = synth_scenario(ScenarioConfig(seed=1, days=2))
    fps = {}
    for feats in (("msg3",), ("r1",), ("msg3", "r1")):
        _, alerts = detect(trace, DetectorConfig(features=feats))
        fps[feats] = score(labels, alerts).fp
    assert fps[("msg3", "r1")] <= min(fps[("msg3",)], fps[("r1",)])
