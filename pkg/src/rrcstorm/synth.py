"""Synthetic legitimate traffic and labelled scenario assembly.

Legitimate traffic starts from 15-minute aggregates drawn from a diurnal
profile. Each aggregate is resampled to seconds with a truncated Poisson
for Msg3 and at most one Bernoulli failure per second for Msg5. Scenarios
then slice the trace into 5-minute periods, label some of them as attacks
or high-loads and merge the corresponding overlays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .storm import (
    EpisodeKind,
    EpisodeSpec,
    GnbParams,
    LoadState,
    min_overload_rate,
    rate_for_target_availability,
    render_overlay,
)
from .trace import PeriodKind, ScenarioLabels, Trace

logger = logging.getLogger(__name__)

BIN_SECONDS = 900
DAY = 86400
# Tuesday 2025-01-07 00:00 UTC
DEFAULT_START_TS = 1736208000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AggregateBin:
    start: int
    msg3_total: int
    msg5_total: int
    n_bue_avg: float

    def __post_init__(self):
        if self.msg3_total < 0 or self.msg5_total < 0 or self.n_bue_avg < 0:
            raise ValueError("aggregate counts must be non-negative")
        if self.msg5_total > self.msg3_total:
            raise ValueError("msg5_total cannot exceed msg3_total")

    @property
    def rate(self) -> float:
        return self.msg3_total / BIN_SECONDS


@dataclass(frozen=True)
class DiurnalProfile:
    """Weekday Msg3 intensity: a night floor plus morning, midday and evening bumps.

    Rates are Msg3 per second. ``failure_ratio`` is the mean share of Msg3
    that never completes; ``failure_exponent > 1`` concentrates those
    failures in busy bins. Bin and day jitter are multiplicative log-normal.
    """

    floor: float = 0.35
    morning: tuple = (4.3, 8.75, 1.6)
    midday: tuple = (2.8, 13.5, 2.6)
    evening: tuple = (5.8, 18.25, 2.2)
    bin_jitter: float = 0.22
    day_jitter: float = 0.06
    n_bue_mean: float = 56.51
    n_bue_cap: int = 175
    failure_ratio: float = 0.0032
    failure_exponent: float = 2.0
    scale: float = 1.0

    def __post_init__(self):
        if self.floor < 0 or self.scale <= 0:
            raise ValueError("floor must be >= 0 and scale > 0")
        for bump in (self.morning, self.midday, self.evening):
            if len(bump) != 3 or bump[0] < 0 or bump[2] <= 0:
                raise ValueError(f"bumps are (amplitude >= 0, hour, width > 0), got {bump}")
        if not 0 <= self.failure_ratio < 1:
            raise ValueError("failure_ratio must lie in [0, 1)")

    def rate(self, hour) -> np.ndarray:
        """Unscaled mean Msg3/s at ``hour`` (fractional hours of the day)."""
        h = np.asarray(hour, dtype=float) % 24.0
        out = np.full_like(h, self.floor)
        for amp, centre, width in (self.morning, self.midday, self.evening):
            # wrap around midnight so the curve is periodic
            dist = np.minimum(np.abs(h - centre), 24.0 - np.abs(h - centre))
            out = out + amp * np.exp(-0.5 * (dist / width) ** 2)
        return out

    def mean_rate(self) -> float:
        return float(self.rate(np.arange(96) / 4 + 0.125).mean())


def resample_msg3(bin: AggregateBin, rng: np.random.Generator) -> np.ndarray:
    """900 per-second Msg3 counts, Poisson around the bin mean truncated at ``ceil(2 * mean)``."""
    lam = bin.rate
    if lam == 0:
        return np.zeros(BIN_SECONDS, dtype=np.int64)
    bound = math.ceil(2 * lam)
    out = rng.poisson(lam, BIN_SECONDS)
    bad = out > bound
    while bad.any():
        out[bad] = rng.poisson(lam, int(bad.sum()))
        bad = out > bound
    return out.astype(np.int64)


def failure_probability(bin: AggregateBin) -> float:
    p = (bin.msg3_total - bin.msg5_total) / BIN_SECONDS
    return min(max(p, 0.0), 1.0)


def resample_msg5(msg3_series, p_fail: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= p_fail <= 1:
        raise ValueError(f"p_fail must lie in [0, 1], got {p_fail}")
    msg3 = np.asarray(msg3_series, dtype=np.int64)
    fail = (rng.random(msg3.size) < p_fail) & (msg3 > 0)
    return msg3 - fail.astype(np.int64)


def synth_bins(profile: DiurnalProfile, days: int, rng: np.random.Generator, start_ts: int = DEFAULT_START_TS) -> list:
    """15-minute aggregates for ``days`` consecutive weekdays."""
    hours = np.arange(96) / 4 + 0.125
    base = profile.rate(hours)
    mean_rate = profile.mean_rate()
    # failures ~ rate**exponent, normalised so the overall ratio matches
    fail_weight = base ** profile.failure_exponent
    fail_norm = profile.failure_ratio * base.sum() / fail_weight.sum()
    bins = []
    for day in range(days):
        day_factor = rng.lognormal(0.0, profile.day_jitter)
        jitter = rng.lognormal(0.0, profile.bin_jitter, size=96)
        lam = base * day_factor * jitter * profile.scale
        for i in range(96):
            msg3_total = int(round(lam[i] * BIN_SECONDS))
            ratio = min(fail_norm * fail_weight[i] / base[i], 1.0)
            failures = int(rng.binomial(msg3_total, ratio)) if msg3_total else 0
            failures = min(failures, BIN_SECONDS)
            n_bue = min(lam[i] / profile.scale / mean_rate * profile.n_bue_mean, profile.n_bue_cap)
            bins.append(
                AggregateBin(
                    start=start_ts + day * DAY + i * BIN_SECONDS,
                    msg3_total=msg3_total,
                    msg5_total=msg3_total - failures,
                    n_bue_avg=n_bue * profile.scale,
                )
            )
    return bins


def resample_bins(bins: list, rng: np.random.Generator) -> Trace:
    msg3, msg5, n_bue = [], [], []
    for b in bins:
        m3 = resample_msg3(b, rng)
        msg3.append(m3)
        msg5.append(resample_msg5(m3, failure_probability(b), rng))
        n_bue.append(np.full(BIN_SECONDS, int(round(b.n_bue_avg)), dtype=np.int64))
    ts = bins[0].start + np.arange(len(bins) * BIN_SECONDS, dtype=np.int64) if bins else np.zeros(0)
    return Trace(ts, np.concatenate(msg3), np.concatenate(msg5), np.concatenate(n_bue))


def synth_baseline(profile: DiurnalProfile, days: int, rng: np.random.Generator, start_ts: int = DEFAULT_START_TS):
    """Per-second legitimate trace and the aggregates it was resampled from."""
    if days < 1:
        raise ValueError("days must be >= 1")
    bins = synth_bins(profile, days, rng, start_ts)
    return resample_bins(bins, rng), bins


RATE_POLICIES = ("range", "fraction_of_min", "availability")


@dataclass
class ScenarioConfig:
    """Everything needed to turn a seed into a labelled trace.

    ``proportions`` are target shares of normal / attack / high-load
    periods. ``rate_policy`` picks the episode rate: uniformly between the
    minimum overload rate and ``rate_max`` (``range``), a uniform fraction
    of the minimum overload rate (``fraction_of_min``) or the rate giving
    ``target_availability`` (``availability``). Explicit ``episodes`` bypass
    the random labelling.
    """

    seed: int = 1
    days: int = 4
    start_ts: int = DEFAULT_START_TS
    period_len: int = 300
    warmup: int = 6 * 3600
    proportions: tuple = (737, 211, 204)
    rate_policy: str = "range"
    rate_max: float = 100.0
    fraction_range: tuple = (0.5, 1.0)
    target_availability: float = 0.95
    load_window: int = 60
    episodes: list = field(default_factory=list)
    gnb: GnbParams = field(default_factory=GnbParams)
    profile: DiurnalProfile = field(default_factory=DiurnalProfile)

    def __post_init__(self):
        if self.rate_policy not in RATE_POLICIES:
            raise ConfigError(f"rate_policy must be one of {RATE_POLICIES}, got {self.rate_policy!r}")
        if len(self.proportions) != 3 or min(self.proportions) < 0 or sum(self.proportions) <= 0:
            raise ConfigError("proportions must be three non-negative weights (normal, attack, highload)")
        if self.period_len <= 0 or DAY % self.period_len:
            raise ConfigError("period_len must divide one day")
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        if self.warmup < 0 or self.warmup % self.period_len:
            raise ConfigError("warmup must be a non-negative multiple of period_len")
        lo, hi = self.fraction_range
        if not 0 < lo <= hi:
            raise ConfigError("fraction_range must satisfy 0 < low <= high")
        if not 0 < self.target_availability <= 1:
            raise ConfigError("target_availability must lie in (0, 1]")
        if self.rate_max <= 0:
            raise ConfigError("rate_max must be positive")
        self.episodes = [e if isinstance(e, EpisodeSpec) else EpisodeSpec(**e) for e in self.episodes]
        if not self.episodes and self.effective_share() > 0.5:
            raise ConfigError(
                f"anomaly share {self.anomaly_share():.3f} cannot be met without adjacent anomalous periods"
            )

    def n_periods(self) -> int:
        return self.days * DAY // self.period_len

    def effective_share(self) -> float:
        """Share of the eligible periods that must be anomalous."""
        n = self.n_periods()
        eligible = n - self.warmup // self.period_len - 1  # last period needs a normal successor
        target = self.anomaly_share() * n
        if target == 0:
            return 0.0
        return math.inf if eligible <= 0 else target / eligible

    def anomaly_share(self) -> float:
        w = self.proportions
        return (w[1] + w[2]) / sum(w)


def load_series(trace: Trace, window: int = 60) -> tuple:
    """Connected UEs and trailing-mean legitimate Msg3 rate, per second."""
    msg3 = trace.msg3.astype(float)
    csum = np.concatenate([[0.0], np.cumsum(msg3)])
    idx = np.arange(msg3.size)
    lo = np.maximum(idx + 1 - window, 0)
    r_bue = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)
    return trace.n_bue.astype(float), r_bue


def sample_period_kinds(n_periods: int, first_eligible: int, cfg: ScenarioConfig, rng: np.random.Generator) -> list:
    """I.i.d. period kinds, then later-of-two adjacent anomalies demoted to normal.

    Demotion thins anomalies to ``p' / (1 + p')`` of the eligible periods, so
    the draw probability is inflated to land on the target share overall.
    """
    kinds = [PeriodKind.NORMAL] * n_periods
    if cfg.anomaly_share() == 0 or n_periods - first_eligible - 1 <= 0:
        return kinds
    p_eff = cfg.anomaly_share() * n_periods / (n_periods - first_eligible - 1)
    if p_eff > 0.5:
        raise ConfigError(
            f"anomaly share {cfg.anomaly_share():.3f} cannot be met without adjacent anomalous periods"
        )
    p_draw = min(p_eff / (1.0 - p_eff), 1.0)
    w = cfg.proportions
    p_attack = w[1] / (w[1] + w[2])
    draws = rng.random(n_periods)
    which = rng.random(n_periods)
    for i in range(first_eligible, n_periods - 1):
        if draws[i] < p_draw:
            kinds[i] = PeriodKind.ATTACK if which[i] < p_attack else PeriodKind.HIGHLOAD
    for i in range(1, n_periods):
        if kinds[i] is not PeriodKind.NORMAL and kinds[i - 1] is not PeriodKind.NORMAL:
            kinds[i] = PeriodKind.NORMAL
    return kinds


def _episode_rate(cfg: ScenarioConfig, state: LoadState, rng: np.random.Generator) -> Optional[float]:
    r_min = min_overload_rate(cfg.gnb, state)
    if cfg.rate_policy == "range":
        lo = min(r_min, cfg.rate_max)
        rate = rng.uniform(lo, cfg.rate_max)
    elif cfg.rate_policy == "fraction_of_min":
        rate = rng.uniform(*cfg.fraction_range) * r_min
    else:
        rate = rate_for_target_availability(cfg.gnb, state, cfg.target_availability)
    return rate if rate > 0 else None


def merge_overlay(trace: Trace, overlay) -> None:
    """Apply an overlay to ``trace`` in place."""
    sl = slice(overlay.start, overlay.start + len(overlay))
    msg3 = trace.msg3[sl] + np.rint(overlay.msg3_extra).astype(np.int64)
    msg5 = trace.msg5[sl] + np.rint(overlay.msg5_extra).astype(np.int64)
    msg5[overlay.rejecting] = 0
    override = overlay.n_bue_override
    n_bue = np.where(override >= 0, override, trace.n_bue[sl])
    trace.msg3[sl] = msg3
    trace.msg5[sl] = msg5
    trace.n_bue[sl] = n_bue


def build_scenario(baseline: Trace, cfg: ScenarioConfig, rng: np.random.Generator):
    """Label the baseline in periods and inject the anomalous ones.

    Returns the merged trace, the period labels and the list of episodes.
    """
    n = len(baseline)
    if n % cfg.period_len:
        raise ConfigError("baseline length must be a whole number of periods")
    n_periods = n // cfg.period_len
    trace = baseline.copy()
    n_bue, r_bue = load_series(baseline, cfg.load_window)
    rates = np.full(n_periods, np.nan)

    if cfg.episodes:
        kinds = [PeriodKind.NORMAL] * n_periods
        episodes = []
        for ep in cfg.episodes:
            start = ep.start - int(baseline.ts[0]) if ep.start >= baseline.ts[0] else ep.start
            ep = EpisodeSpec(ep.kind, ep.rate, start, ep.duration, ep.ramp)
            if ep.end > n:
                raise ConfigError("episode extends past the end of the trace")
            episodes.append(ep)
            first = start // cfg.period_len
            last = (ep.end - 1) // cfg.period_len
            for p in range(first, last + 1):
                kinds[p] = PeriodKind(ep.kind.value)
                rates[p] = ep.rate
    else:
        first_eligible = cfg.warmup // cfg.period_len
        kinds = sample_period_kinds(n_periods, first_eligible, cfg, rng)
        episodes = []
        for p, kind in enumerate(kinds):
            if kind is PeriodKind.NORMAL:
                continue
            start = p * cfg.period_len
            state = LoadState(n_bue[start], r_bue[start])
            rate = _episode_rate(cfg, state, rng)
            if rate is None:
                logger.debug("period %d: no positive episode rate, kept normal", p)
                kinds[p] = PeriodKind.NORMAL
                continue
            rates[p] = rate
            episodes.append(EpisodeSpec(EpisodeKind(kind.value), rate, start, cfg.period_len))

    for ep in episodes:
        merge_overlay(trace, render_overlay(cfg.gnb, n_bue, r_bue, ep))
    labels = ScenarioLabels(baseline.ts[:: cfg.period_len].copy(), kinds, rates, cfg.period_len)
    abs_episodes = [
        EpisodeSpec(ep.kind, ep.rate, int(baseline.ts[0]) + ep.start, ep.duration, ep.ramp) for ep in episodes
    ]
    return trace, labels, abs_episodes


def synth_scenario(cfg: ScenarioConfig):
    """Baseline plus scenario from a single seeded stream."""
    rng = np.random.default_rng(cfg.seed)
    baseline, _ = synth_baseline(cfg.profile, cfg.days, rng, cfg.start_ts)
    return build_scenario(baseline, cfg, rng)
