"""Static Gaussian comparison detector.

A reference day is cut into two-hour periods and each period gets the
threshold ``mean + 3 * std`` of its per-second Msg3 counts. A second is
positive when Msg3 exceeds the threshold of its period; alerts use the same
confirmation buffering and R2 differentiator as the EVT detector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_traffic
from .detector import AlertTracker, Decision, DecisionClass
from .evt import compute_r1
from .trace import Trace, TrafficSample

logger = logging.getLogger(__name__)

DAY = 86400
PERIOD_SECONDS = 7200
N_PERIODS = DAY // PERIOD_SECONDS


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class PeriodThresholds:
    mean: np.ndarray
    std: np.ndarray
    k: float = 3.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != (N_PERIODS,) or std.shape != (N_PERIODS,):
            raise ValueError(f"expected {N_PERIODS} periods")
        if np.any(std < 0):
            raise ValueError("std must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def threshold(self) -> np.ndarray:
        return self.mean + self.k * self.std

    def at(self, ts) -> np.ndarray:
        """Threshold in force at each epoch second (UTC day periods)."""
        idx = (np.asarray(ts, dtype=np.int64) % DAY) // PERIOD_SECONDS
        return self.threshold[idx]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodThresholds":
        return cls(d["mean"], d["std"], d.get("k", 3.0))


def fit_baseline(ts, msg3, keep=None, k: float = 3.0) -> PeriodThresholds:
    """Per-period ``mean + k * std`` of Msg3 over one reference day.

    ``keep`` optionally masks out seconds (labelled anomalies) before fitting.
    The sample std uses the ``n - 1`` denominator.
    """
    ts = np.asarray(ts, dtype=np.int64)
    msg3 = np.asarray(msg3, dtype=float)
    if ts.shape != msg3.shape:
        raise ValueError("ts and msg3 must have the same length")
    if keep is not None:
        keep = np.asarray(keep, dtype=bool)
        ts, msg3 = ts[keep], msg3[keep]
    idx = (ts % DAY) // PERIOD_SECONDS
    mean = np.empty(N_PERIODS)
    std = np.empty(N_PERIODS)
    for p in range(N_PERIODS):
        x = msg3[idx == p]
        if x.size < 2:
            raise InsufficientData(f"period {p} has {x.size} samples, need at least 2")
        mean[p] = x.mean()
        std[p] = x.std(ddof=1)
    return PeriodThresholds(mean, std, k)


def reference_day(trace: Trace, labels=None, day: int = 0):
    """``(ts, msg3, keep)`` for one day of ``trace`` with labelled anomalies masked."""
    lo = int(trace.ts[0]) + day * DAY
    sel = (trace.ts >= lo) & (trace.ts < lo + DAY)
    ts, msg3 = trace.ts[sel], trace.msg3[sel]
    keep = np.ones(ts.size, dtype=bool)
    if labels is not None:
        period = (ts - labels.period_start[0]) // labels.period_len
        keep = ~labels.anomalous()[period]
    return ts, msg3, keep


def run_static(thresholds: PeriodThresholds, samples: Iterable[TrafficSample], tracker: AlertTracker) -> Iterator[Decision]:
    """Stream decisions of the static detector; alerts accumulate on ``tracker``."""
    table = thresholds.threshold.tolist()
    for ts, msg3, msg5, n_bue in samples:
        level = table[(ts % DAY) // PERIOD_SECONDS]
        positive = msg3 > level
        alert = tracker.push(ts, positive, n_bue)
        yield Decision(
            ts,
            msg3,
            compute_r1(msg3, msg5),
            level,
            None,
            DecisionClass.POSITIVE if positive else DecisionClass.NORMAL,
            None if alert is None else alert.alert_id,
            None if alert is None else alert.verdict,
        )


def detect_static(
    thresholds: PeriodThresholds,
    trace: Trace,
    confirm_count: int = 2,
    r2_highload_level: float = 0.99,
    r2_horizon: int = 30,
    n_max: int = 300,
):
    """Run the static detector; returns ``(decisions, alerts)`` like :func:`detector.detect`."""
    tracker = AlertTracker(confirm_count, r2_highload_level, r2_horizon, n_max)
    decisions = list(run_static(thresholds, trace, tracker))
    last = int(trace.ts[-1]) if len(trace) else None
    return decisions, tracker.finish(last)


class GaussianBaseline(BaseEstimator):
    """Estimator wrapper: ``fit`` on a reference day, ``predict`` 1 inside alerts."""

    def __init__(self, k=3.0, confirm_count=2, r2_highload_level=0.99, r2_horizon=30, n_max=300):
        self.k = k
        self.confirm_count = confirm_count
        self.r2_highload_level = r2_highload_level
        self.r2_horizon = r2_horizon
        self.n_max = n_max

    def fit(self, X, y=None, ts=None):
        arr = check_traffic(X, min_len=2)
        ts = np.arange(arr.shape[0]) if ts is None else np.asarray(ts)
        keep = None if y is None else ~np.asarray(y, dtype=bool)
        self.thresholds_ = fit_baseline(ts, arr[:, 0], keep, self.k)
        return self

    def predict(self, X, ts=None) -> np.ndarray:
        if not hasattr(self, "thresholds_"):
            raise RuntimeError("GaussianBaseline is not fitted")
        arr = check_traffic(X)
        ts = np.arange(arr.shape[0]) if ts is None else np.asarray(ts)
        trace = Trace(ts, arr[:, 0], arr[:, 1], arr[:, 2])
        decisions, self.alerts_ = detect_static(
            self.thresholds_, trace, self.confirm_count, self.r2_highload_level, self.r2_horizon, self.n_max
        )
        return np.array([d.alert_id is not None for d in decisions], dtype=int)
