"""Two-stage online storm detector.

Stage one flags a second as positive when the Msg3 count is anomalous on
its upper tail *and* the completion ratio R1 is anomalous on its lower
tail. ``confirm_count`` consecutive positives open an alert. Stage two
watches the connected-UE utilisation R2 while the alert is open: a
legitimate high-load fills the gNB (R2 reaches 1), an attack does not.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .evt import PotConfig, PotState, SampleClass, TailDirection, compute_r1
from .trace import Trace, TrafficSample

logger = logging.getLogger(__name__)

FEATURES = ("msg3", "r1")
EXCLUSION_MODES = ("union", "feature", "none")


class Verdict(str, Enum):
    PENDING = "pending"
    ATTACK = "attack"
    HIGHLOAD = "highload"


class DecisionClass(str, Enum):
    BOOTSTRAP = "bootstrap"
    NORMAL = "normal"
    MSG3 = "msg3"  # only the Msg3 feature is anomalous
    R1 = "r1"  # only the R1 feature is anomalous
    POSITIVE = "positive"


# Inside the detector, excluded seconds are storm traffic rather than tail
# samples of the normal load, so they are skipped instead of censored, and
# every failed refit keeps the previous threshold.


def default_msg3_pot() -> PotConfig:
    return PotConfig(
        window_len=180,
        gap_len=30,
        q=3e-4,
        init_quantile=0.98,
        direction=TailDirection.UPPER,
        censor=False,
        support_fallback=False,
    )


def default_r1_pot() -> PotConfig:
    return PotConfig(
        window_len=18000,
        gap_len=60,
        q=1e-5,
        init_quantile=0.001,
        direction=TailDirection.LOWER,
        bounds=(0.0, 1.0),
        censor=False,
        support_fallback=False,
    )


@dataclass
class DetectorConfig:
    msg3_pot: PotConfig = field(default_factory=default_msg3_pot)
    r1_pot: PotConfig = field(default_factory=default_r1_pot)
    confirm_count: int = 2
    r2_highload_level: float = 0.99
    r2_horizon: int = 30
    n_max: int = 300
    features: tuple = FEATURES
    exclusion: str = "union"

    def __post_init__(self):
        if self.exclusion not in EXCLUSION_MODES:
            raise ValueError(f"exclusion must be one of {EXCLUSION_MODES}")
        if self.confirm_count < 1:
            raise ValueError("confirm_count must be >= 1")
        if not 0 < self.r2_highload_level <= 1:
            raise ValueError("r2_highload_level must lie in (0, 1]")
        if self.r2_horizon < 1:
            raise ValueError("r2_horizon must be >= 1")
        self.features = tuple(self.features)
        if not self.features or set(self.features) - set(FEATURES):
            raise ValueError(f"features must be a non-empty subset of {FEATURES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["msg3_pot"] = self.msg3_pot.to_dict()
        d["r1_pot"] = self.r1_pot.to_dict()
        d["features"] = list(self.features)
        return d


@dataclass
class Alert:
    alert_id: int
    onset_ts: int
    detect_ts: int
    end_ts: Optional[int] = None
    verdict: Verdict = Verdict.PENDING

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "onset_ts": self.onset_ts,
            "detect_ts": self.detect_ts,
            "end_ts": self.end_ts,
            "verdict": self.verdict.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Alert":
        return cls(d["alert_id"], d["onset_ts"], d["detect_ts"], d.get("end_ts"), Verdict(d["verdict"]))


@dataclass
class Decision:
    ts: int
    msg3: int
    r1: float
    th_msg3: Optional[float]
    th_r1: Optional[float]
    cls: DecisionClass
    alert_id: Optional[int]
    verdict: Optional[Verdict]

    @property
    def positive(self) -> bool:
        return self.cls is DecisionClass.POSITIVE


def differentiate(r2_series: Sequence[float], level: float = 0.99, horizon: int = 30, closed: bool = False) -> Verdict:
    """Attack or high-load from the R2 values observed since alert onset.

    High-load as soon as R2 reaches ``level`` after a non-decreasing run
    (looking back at most ``horizon`` seconds); attack once ``horizon``
    seconds have passed (or the alert closed) without that happening.
    """
    r2 = np.asarray(r2_series, dtype=float)
    hits = np.flatnonzero(r2 >= level)
    for k in hits:
        run = r2[max(0, k - horizon + 1): k + 1]
        if np.all(np.diff(run) >= 0):
            return Verdict.HIGHLOAD
    if closed or r2.size >= horizon:
        return Verdict.ATTACK
    return Verdict.PENDING


class AlertTracker:
    """Confirmation buffering, alert lifecycle and the R2 differentiator.

    Shared by the EVT detector and the static baseline so both are scored
    with identical alert semantics.
    """

    def __init__(self, confirm_count=2, r2_highload_level=0.99, r2_horizon=30, n_max=300):
        self.confirm_count = confirm_count
        self.level = r2_highload_level
        self.horizon = r2_horizon
        self.n_max = n_max
        self.consec_pos = 0
        self.consec_neg = 0
        self.active: Optional[Alert] = None
        self.alerts: list = []
        self._next_id = 1
        self._recent_r2: deque = deque(maxlen=confirm_count)
        self._r2: list = []

    @property
    def in_alert(self) -> bool:
        return self.active is not None

    def push(self, ts: int, positive: bool, n_bue: int) -> Optional[Alert]:
        r2 = min(max(n_bue / self.n_max, 0.0), 1.0)
        self._recent_r2.append(r2)
        if positive:
            self.consec_pos += 1
            self.consec_neg = 0
        else:
            self.consec_pos = 0
            self.consec_neg += 1
        if self.active is None:
            if positive and self.consec_pos >= self.confirm_count:
                onset = ts - self.confirm_count + 1
                self.active = Alert(self._next_id, onset, ts)
                self._next_id += 1
                self._r2 = list(self._recent_r2)
                self._reassess(closed=False)
            return self.active
        self._r2.append(r2)
        if self.consec_neg >= self.confirm_count:
            alert = self.active
            alert.end_ts = ts - self.confirm_count
            self._reassess(closed=True)
            self.alerts.append(alert)
            self.active = None
            return alert
        self._reassess(closed=False)
        return self.active

    def _reassess(self, closed: bool):
        if self.active.verdict is Verdict.HIGHLOAD:
            return
        verdict = differentiate(self._r2, self.level, self.horizon, closed)
        if verdict is not Verdict.PENDING:
            self.active.verdict = verdict

    def finish(self, last_ts: Optional[int]) -> list:
        """Close any alert still open at end of stream; returns all alerts."""
        if self.active is not None:
            self.active.end_ts = last_ts
            self._reassess(closed=True)
            self.alerts.append(self.active)
            self.active = None
        return self.alerts


class DetectorState:
    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.msg3 = PotState(cfg.msg3_pot)
        self.r1 = PotState(cfg.r1_pot)
        self.tracker = AlertTracker(cfg.confirm_count, cfg.r2_highload_level, cfg.r2_horizon, cfg.n_max)
        self.last_ts: Optional[int] = None

    @property
    def ready(self) -> bool:
        return self.msg3.ready and self.r1.ready

    @property
    def alerts(self) -> list:
        return self.tracker.alerts


def step(state: DetectorState, sample: TrafficSample) -> Decision:
    """Advance the detector by one second."""
    cfg = state.cfg
    ts, msg3, msg5, n_bue = sample
    if state.last_ts is not None and ts != state.last_ts + 1:
        raise ValueError(f"timestamps must advance by 1 s (got {ts} after {state.last_ts})")
    state.last_ts = ts
    r1 = compute_r1(msg3, msg5)
    if not state.ready:
        c3 = state.msg3.update(msg3)
        cr = state.r1.update(r1)
        return Decision(ts, msg3, r1, state.msg3.t_anomaly, state.r1.t_anomaly, DecisionClass.BOOTSTRAP, None, None)
    c3 = state.msg3.classify(msg3)
    cr = state.r1.classify(r1)
    flags = {"msg3": c3 is SampleClass.ANOMALY, "r1": cr is SampleClass.ANOMALY}
    positive = all(flags[f] for f in cfg.features)
    storm = state.tracker.in_alert or positive
    if cfg.exclusion == "none":
        # diagnostic mode: every second feeds both windows
        admit3 = admit_r1 = True
    elif storm:
        admit3 = admit_r1 = False
    elif cfg.exclusion == "union":
        # a second flagged by either machine stays out of both windows
        admit3 = admit_r1 = not (flags["msg3"] or flags["r1"])
    else:
        admit3, admit_r1 = not flags["msg3"], not flags["r1"]
    state.msg3.commit(msg3, c3, admit=admit3)
    state.r1.commit(r1, cr, admit=admit_r1)
    th3 = state.msg3.t_anomaly
    thr = state.r1.t_anomaly
    if positive:
        cls = DecisionClass.POSITIVE
    elif flags["msg3"] and not flags["r1"]:
        cls = DecisionClass.MSG3
    elif flags["r1"] and not flags["msg3"]:
        cls = DecisionClass.R1
    else:
        cls = DecisionClass.NORMAL
    alert = state.tracker.push(ts, positive, n_bue)
    if alert is None:
        return Decision(ts, msg3, r1, th3, thr, cls, None, None)
    return Decision(ts, msg3, r1, th3, thr, cls, alert.alert_id, alert.verdict)


def run(samples: Iterable[TrafficSample], cfg: Optional[DetectorConfig] = None, state: Optional[DetectorState] = None) -> Iterator[Decision]:
    """Stream decisions for ``samples``; alerts accumulate on ``state``."""
    state = state if state is not None else DetectorState(cfg or DetectorConfig())
    for sample in samples:
        yield step(state, sample)


def detect(trace: Trace, cfg: Optional[DetectorConfig] = None):
    """Run the detector over a whole in-memory trace.

    Returns ``(decisions, alerts)`` with any open alert closed at the end.
    """
    state = DetectorState(cfg or DetectorConfig())
    decisions = list(run(trace, state=state))
    alerts = state.tracker.finish(state.last_ts)
    return decisions, alerts


class StormDetector(BaseEstimator):
    """Estimator interface to the streaming detector.

    ``X`` is an ``(n, 3)`` array of per-second ``msg3, msg5, n_bue``.
    ``fit`` resets the state and streams ``X`` (bootstrap included);
    ``predict`` keeps streaming and returns 1 for seconds inside an alert.
    """

    def __init__(
        self,
        msg3_window=180,
        msg3_gap=30,
        msg3_q=3e-4,
        msg3_quantile=0.98,
        r1_window=18000,
        r1_gap=60,
        r1_q=1e-5,
        r1_quantile=0.001,
        confirm_count=2,
        r2_highload_level=0.99,
        r2_horizon=30,
        n_max=300,
        features=FEATURES,
        exclusion="union",
    ):
        self.msg3_window = msg3_window
        self.msg3_gap = msg3_gap
        self.msg3_q = msg3_q
        self.msg3_quantile = msg3_quantile
        self.r1_window = r1_window
        self.r1_gap = r1_gap
        self.r1_q = r1_q
        self.r1_quantile = r1_quantile
        self.confirm_count = confirm_count
        self.r2_highload_level = r2_highload_level
        self.r2_horizon = r2_horizon
        self.n_max = n_max
        self.features = features
        self.exclusion = exclusion

    def _config(self) -> DetectorConfig:
        return DetectorConfig(
            msg3_pot=replace(
                default_msg3_pot(),
                window_len=self.msg3_window,
                gap_len=self.msg3_gap,
                q=self.msg3_q,
                init_quantile=self.msg3_quantile,
            ),
            r1_pot=replace(
                default_r1_pot(),
                window_len=self.r1_window,
                gap_len=self.r1_gap,
                q=self.r1_q,
                init_quantile=self.r1_quantile,
            ),
            confirm_count=self.confirm_count,
            r2_highload_level=self.r2_highload_level,
            r2_horizon=self.r2_horizon,
            n_max=self.n_max,
            features=self.features,
            exclusion=self.exclusion,
        )

    def fit(self, X, y=None, ts=None):
        self.state_ = DetectorState(self._config())
        self._stream(X, ts)
        return self

    def _stream(self, X, ts) -> list:
        from ._validation import check_traffic

        arr = check_traffic(X)
        if ts is None:
            start = 0 if self.state_.last_ts is None else self.state_.last_ts + 1
            ts = np.arange(start, start + arr.shape[0])
        samples = (TrafficSample(int(t), int(a), int(b), int(c)) for t, (a, b, c) in zip(ts, arr))
        self.decisions_ = list(run(samples, state=self.state_))
        return self.decisions_

    def predict(self, X, ts=None) -> np.ndarray:
        if not hasattr(self, "state_"):
            raise RuntimeError("StormDetector is not fitted")
        decisions = self._stream(X, ts)
        return np.array([d.alert_id is not None for d in decisions], dtype=int)

    @property
    def alerts_(self) -> list:
        return self.state_.alerts
