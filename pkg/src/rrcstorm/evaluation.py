"""Period-level scoring and the named scenario suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .baseline import detect_static, fit_baseline, reference_day
from .detector import Alert, DetectorConfig, Verdict, detect
from .storm import EpisodeKind, EpisodeSpec
from .synth import DEFAULT_START_TS, DiurnalProfile, ScenarioConfig, synth_scenario
from .trace import PeriodKind, ScenarioLabels, Trace

logger = logging.getLogger(__name__)

METHODS = ("evt", "gaussian")


class RangeMismatch(ValueError):
    """Labels and decisions do not cover the same time range."""


@dataclass
class EventResult:
    start: int
    end: int
    kind: str
    rate: float
    detected: bool
    latency: Optional[float]
    verdict: Optional[str]

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "kind": self.kind,
            "rate": None if np.isnan(self.rate) else round(float(self.rate), 6),
            "detected": self.detected,
            "latency": self.latency,
            "verdict": self.verdict,
        }


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    latencies: list
    verdict_confusion: dict
    events: list = field(default_factory=list)
    scenario: str = ""
    method: str = "evt"
    seed: Optional[int] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 1.0

    @property
    def precision_undefined(self) -> bool:
        return self.tp + self.fp == 0

    @property
    def recall_undefined(self) -> bool:
        return self.tp + self.fn == 0

    @property
    def precision(self) -> float:
        return 1.0 if self.precision_undefined else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 1.0 if self.recall_undefined else self.tp / (self.tp + self.fn)

    @property
    def mean_latency(self) -> Optional[float]:
        return float(np.mean(self.latencies)) if self.latencies else None

    @property
    def confused(self) -> int:
        """Detected events whose final verdict names the other kind."""
        c = self.verdict_confusion
        return c["attack"]["highload"] + c["highload"]["attack"]

    def to_dict(self) -> dict:
        lat = self.mean_latency
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": round(self.accuracy, 6),
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
            "precision_undefined": self.precision_undefined,
            "recall_undefined": self.recall_undefined,
            "mean_latency": None if lat is None else round(lat, 6),
            "verdict_confusion": self.verdict_confusion,
            "events": [e.to_dict() for e in self.events],
        }


def label_events(labels: ScenarioLabels) -> list:
    """Maximal runs of equally-labelled anomalous periods as ``(start, end, kind, rate)``."""
    out = []
    kinds = labels.kind
    i = 0
    while i < len(kinds):
        if kinds[i] is PeriodKind.NORMAL:
            i += 1
            continue
        j = i
        while j + 1 < len(kinds) and kinds[j + 1] is kinds[i]:
            j += 1
        start = int(labels.period_start[i])
        end = int(labels.period_start[j]) + labels.period_len
        out.append((start, end, kinds[i].value, float(labels.rate[i])))
        i = j + 1
    return out


def _span(alert: Alert, last_ts: int) -> tuple:
    end = alert.end_ts if alert.end_ts is not None else last_ts
    return alert.onset_ts, max(end, alert.onset_ts)


def score(labels: ScenarioLabels, alerts: Sequence[Alert], ts_range: Optional[tuple] = None) -> EvalReport:
    """Score alerts against period labels.

    An anomalous period is a TP when any alert overlaps it. A normal period
    is an FP when an alert overlaps it that is not explained by an adjacent
    anomalous period overlapped by the same alert. ``ts_range`` is the
    ``(first, last)`` second the detector saw and must cover the labels.
    """
    n = len(labels)
    if n == 0:
        raise RangeMismatch("no labelled periods")
    plen = labels.period_len
    lo = int(labels.period_start[0])
    hi = int(labels.period_start[-1]) + plen - 1
    if ts_range is not None and (ts_range[0] > lo or ts_range[1] < hi):
        raise RangeMismatch(f"decisions cover {ts_range}, labels need [{lo}, {hi}]")
    anom = labels.anomalous()
    hit = np.zeros(n, dtype=bool)
    unexplained = np.zeros(n, dtype=bool)
    for a in alerts:
        on, off = _span(a, hi)
        p0 = max((on - lo) // plen, 0)
        p1 = min((off - lo) // plen, n - 1)
        if p1 < p0:
            continue
        covered = np.arange(p0, p1 + 1)
        hit[covered] = True
        for p in covered:
            if anom[p]:
                continue
            near = [q for q in (p - 1, p + 1) if p0 <= q <= p1 and anom[q]]
            if not near:
                unexplained[p] = True
    tp = int(np.sum(hit & anom))
    fn = int(np.sum(~hit & anom))
    fp = int(np.sum(unexplained & ~anom))
    tn = int(np.sum(~anom)) - fp

    confusion = {k: {"attack": 0, "highload": 0, "pending": 0} for k in ("attack", "highload")}
    latencies, events = [], []
    spans = [(_span(a, hi), a) for a in alerts]
    for start, end, kind, rate in label_events(labels):
        first = None
        for (on, off), a in spans:
            if on < end and off >= start and (first is None or a.detect_ts < first.detect_ts):
                first = a
        if first is None:
            events.append(EventResult(start, end, kind, rate, False, None, None))
            continue
        latency = float(max(first.detect_ts - start, 0))
        latencies.append(latency)
        confusion[kind][first.verdict.value] += 1
        events.append(EventResult(start, end, kind, rate, True, latency, first.verdict.value))
    return EvalReport(tp, fp, tn, fn, latencies, confusion, events)


def summarize(reports: Sequence[EvalReport]) -> dict:
    """Pool confusion counts over seeds; latency is the mean over all detected events."""
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    tn = sum(r.tn for r in reports)
    fn = sum(r.fn for r in reports)
    lat = [x for r in reports for x in r.latencies]
    pooled = EvalReport(tp, fp, tn, fn, lat, {k: {} for k in ("attack", "highload")})
    return {
        "accuracy": pooled.accuracy,
        "precision": pooled.precision,
        "recall": pooled.recall,
        "mean_latency": pooled.mean_latency,
        "confused": sum(r.confused for r in reports),
        "min_precision": min(r.precision for r in reports),
        "min_recall": min(r.recall for r in reports),
    }


# scenarios -----------------------------------------------------------------


def _single_attack(seed: int) -> ScenarioConfig:
    # one 15-minute flood at rate 100 starting 15:15 on the second day
    start = DEFAULT_START_TS + 86400 + 15 * 3600 + 15 * 60
    ep = EpisodeSpec(EpisodeKind.ATTACK, 100.0, start, 900)
    return ScenarioConfig(seed=seed, days=2, episodes=[ep])


SCENARIOS: dict = {
    "SingleAttack": _single_attack,
    "MultiRandom": lambda seed: ScenarioConfig(seed=seed),
    # high-loads keep the gNB overloaded for long, so this one is attacks only
    "LowUnavailability": lambda seed: ScenarioConfig(
        seed=seed, rate_policy="availability", target_availability=0.95, proportions=(737, 415, 0)
    ),
    "LowRate": lambda seed: ScenarioConfig(seed=seed, rate_policy="fraction_of_min", fraction_range=(0.5, 1.0)),
    "BusyGnb": lambda seed: ScenarioConfig(seed=seed, profile=DiurnalProfile(scale=1.5)),
}


@dataclass
class ScenarioSuite:
    """Named scenario factories; each maps a seed to a :class:`ScenarioConfig`."""

    scenarios: dict = field(default_factory=lambda: dict(SCENARIOS))

    def names(self) -> list:
        return list(self.scenarios)

    def config(self, name: str, seed: int) -> ScenarioConfig:
        try:
            factory: Callable = self.scenarios[name]
        except KeyError:
            raise KeyError(f"unknown scenario {name!r}; choose from {self.names()}") from None
        return factory(seed)


@dataclass
class RunResult:
    trace: Trace
    labels: ScenarioLabels
    episodes: list
    decisions: list
    alerts: list
    report: EvalReport
    seconds: float


def run_method(trace: Trace, labels: ScenarioLabels, method: str = "evt", cfg: Optional[DetectorConfig] = None):
    """Detect with one method; returns ``(decisions, alerts)``."""
    cfg = cfg or DetectorConfig()
    if method == "evt":
        return detect(trace, cfg)
    if method == "gaussian":
        ts, msg3, keep = reference_day(trace, labels)
        th = fit_baseline(ts, msg3, keep)
        return detect_static(th, trace, cfg.confirm_count, cfg.r2_highload_level, cfg.r2_horizon, cfg.n_max)
    raise ValueError(f"method must be one of {METHODS}")


def run_scenario(
    name: str,
    seed: int,
    method: str = "evt",
    cfg: Optional[DetectorConfig] = None,
    suite: Optional[ScenarioSuite] = None,
) -> RunResult:
    suite = suite or ScenarioSuite()
    t0 = time.perf_counter()
    trace, labels, episodes = synth_scenario(suite.config(name, seed))
    decisions, alerts = run_method(trace, labels, method, cfg)
    report = score(labels, alerts, (int(trace.ts[0]), int(trace.ts[-1])))
    report = replace(report, scenario=name, method=method, seed=seed)
    elapsed = time.perf_counter() - t0
    logger.info(
        "%s seed=%d %s: precision=%.4f recall=%.4f latency=%s (%.1fs)",
        name, seed, method, report.precision, report.recall, report.mean_latency, elapsed,
    )
    return RunResult(trace, labels, episodes, decisions, alerts, report, elapsed)


def run_suite(
    names: Optional[Sequence[str]] = None,
    seeds: Sequence[int] = (1,),
    methods: Sequence[str] = ("evt",),
    cfg: Optional[DetectorConfig] = None,
    suite: Optional[ScenarioSuite] = None,
) -> list:
    """Reports for every scenario x seed x method combination."""
    suite = suite or ScenarioSuite()
    reports = []
    for name in names or suite.names():
        for seed in seeds:
            for method in methods:
                reports.append(run_scenario(name, seed, method, cfg, suite).report)
    return reports


TABLE_COLUMNS = ("scenario", "method", "features", "seeds", "accuracy", "precision", "recall", "latency_s", "confused")


def table_rows(reports: Sequence[EvalReport], features: str = "msg3+r1") -> list:
    """One summary row per (scenario, method), pooled over seeds."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.scenario, r.method), []).append(r)
    rows = []
    for (scenario, method), rs in groups.items():
        s = summarize(rs)
        lat = s["mean_latency"]
        rows.append(
            {
                "scenario": scenario,
                "method": method,
                "features": features if method == "evt" else "msg3",
                "seeds": " ".join(str(r.seed) for r in rs),
                "accuracy": f"{s['accuracy']:.6f}",
                "precision": f"{s['precision']:.6f}",
                "recall": f"{s['recall']:.6f}",
                "latency_s": "" if lat is None else f"{lat:.6f}",
                "confused": s["confused"],
            }
        )
    return rows


def plot_rows(decisions: Sequence, labels: ScenarioLabels):
    """Per-second rows for threshold plots: observations, thresholds and the period label."""
    lo = int(labels.period_start[0])
    for d in decisions:
        p = (d.ts - lo) // labels.period_len
        kind = labels.kind[p].value if 0 <= p < len(labels) else ""
        yield {
            "ts": d.ts,
            "msg3": d.msg3,
            "th_msg3": "" if d.th_msg3 is None else f"{d.th_msg3:.6f}",
            "r1": f"{d.r1:.6f}",
            "th_r1": "" if d.th_r1 is None else f"{d.th_r1:.6f}",
            "label": kind,
        }


def verdict_ok(report: EvalReport) -> bool:
    return report.confused == 0 and all(
        e.verdict != Verdict.PENDING.value for e in report.events if e.detected
    )


def second_confusion(labels: ScenarioLabels, rows: Iterable) -> dict:
    """Per-second TP/FP/TN/FN from ``(ts, in_alert)`` pairs; a diagnostic beside the period metrics."""
    anom = labels.anomalous()
    lo = int(labels.period_start[0])
    out = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for ts, flagged in rows:
        p = (ts - lo) // labels.period_len
        if not 0 <= p < len(labels):
            continue
        truth = bool(anom[p])
        key = ("tp" if truth else "fp") if flagged else ("fn" if truth else "tn")
        out[key] += 1
    return out
