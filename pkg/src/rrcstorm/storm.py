"""Closed-form gNB overload model and per-second episode overlays.

An attacker (or a crowd of legitimate UEs) sending Msg3 at rate ``r``
reserves RRC resources faster than the gNB releases them. The gNB then
alternates between accepting for ``t_a`` seconds and rejecting for ``t_r``
seconds, where the reject phase lasts until the waiting time ``t_w`` expires
(attack) or until connected UEs leave (high-load).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np


class InfeasibleTarget(ValueError):
    pass


class EpisodeKind(str, Enum):
    ATTACK = "attack"
    HIGHLOAD = "highload"


@dataclass(frozen=True)
class GnbParams:
    t_w: float = 5.0
    n_max: int = 300

    def __post_init__(self):
        if not self.t_w > 0:
            raise ValueError(f"t_w must be positive, got {self.t_w}")
        if not self.n_max > 0:
            raise ValueError(f"n_max must be positive, got {self.n_max}")


@dataclass(frozen=True)
class LoadState:
    n_bue: float
    r_bue: float

    def __post_init__(self):
        if self.n_bue < 0 or self.r_bue < 0:
            raise ValueError("n_bue and r_bue must be non-negative")


@dataclass(frozen=True)
class EpisodeSpec:
    kind: EpisodeKind
    rate: float
    start: int
    duration: int
    ramp: int = 0  # seconds of linear ramp-up to ``rate``

    def __post_init__(self):
        object.__setattr__(self, "kind", EpisodeKind(self.kind))
        if not 0 <= self.ramp <= self.duration:
            raise ValueError(f"ramp must lie in [0, duration], got {self.ramp}")
        if not self.rate > 0:
            raise ValueError(f"episode rate must be positive, got {self.rate}")
        if not self.duration > 0:
            raise ValueError(f"episode duration must be positive, got {self.duration}")

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass(frozen=True)
class OverlaySample:
    msg3_extra: float
    msg5_extra: float
    n_bue_override: Optional[int]
    rejecting: bool


@dataclass
class Overlay:
    """Columnar overlay for one episode; index ``i`` is second ``start + i``."""

    start: int
    msg3_extra: np.ndarray
    msg5_extra: np.ndarray
    n_bue_override: np.ndarray  # -1 where the baseline value passes through
    rejecting: np.ndarray

    def __len__(self):
        return self.msg3_extra.size

    def __getitem__(self, i: int) -> OverlaySample:
        n = int(self.n_bue_override[i])
        return OverlaySample(
            msg3_extra=float(self.msg3_extra[i]),
            msg5_extra=float(self.msg5_extra[i]),
            n_bue_override=None if n < 0 else n,
            rejecting=bool(self.rejecting[i]),
        )


def accept_reject_durations(p: GnbParams, s: LoadState, r_att: float) -> tuple:
    total = r_att + s.r_bue
    if not total > 0:
        raise ValueError("r_att + r_bue must be positive")
    t_a = max(p.n_max - s.n_bue, 0.0) / total
    t_r = max(0.0, p.t_w - t_a)
    return t_a, t_r


def availability(t_a: float, t_r: float) -> float:
    if not t_a + t_r > 0:
        raise ValueError("t_a + t_r must be positive")
    return t_a / (t_a + t_r)


def min_overload_rate(p: GnbParams, s: LoadState) -> float:
    """Lowest Msg3 rate that drives the gNB into rejecting (never negative)."""
    return max(0.0, (p.n_max - s.n_bue) / p.t_w - s.r_bue)


def rate_for_target_availability(p: GnbParams, s: LoadState, r_avai: float) -> float:
    """Attack rate whose accept/reject cycle yields availability ``r_avai``."""
    if not 0 < r_avai <= 1:
        raise ValueError(f"target availability must lie in (0, 1], got {r_avai}")
    rate = (p.n_max - s.n_bue) / (r_avai * p.t_w) - s.r_bue
    if rate < 0:
        raise InfeasibleTarget(
            f"availability {r_avai} unreachable: legitimate load alone already overloads the gNB"
        )
    if r_avai == 1:
        return min_overload_rate(p, s)
    return rate


def compute_r2(n_bue: float, n_max: float) -> float:
    if not n_max > 0:
        raise ValueError("n_max must be positive")
    if not 0 <= n_bue <= n_max:
        raise ValueError(f"n_bue must lie in [0, n_max], got {n_bue}")
    return n_bue / n_max


def render_overlay(p: GnbParams, n_bue, r_bue, spec: EpisodeSpec) -> Overlay:
    """Per-second overlay of one episode on top of a baseline load series.

    ``n_bue`` and ``r_bue`` are the baseline connected-UE count and
    legitimate Msg3 rate indexed by second; ``spec.start`` indexes into them.
    """
    n_bue = np.asarray(n_bue, dtype=float)
    r_bue = np.asarray(r_bue, dtype=float)
    if spec.start < 0 or spec.end > n_bue.size or r_bue.size != n_bue.size:
        raise ValueError("episode must lie inside the baseline series")
    d = int(spec.duration)
    msg3_extra = np.full(d, float(spec.rate))
    if spec.ramp:
        msg3_extra *= np.minimum(np.arange(1, d + 1) / spec.ramp, 1.0)
    msg5_extra = np.zeros(d)
    override = np.full(d, -1, dtype=np.int64)
    rejecting = np.zeros(d, dtype=bool)
    if spec.kind is EpisodeKind.ATTACK:
        _render_attack(p, n_bue, r_bue, spec, msg3_extra, override, rejecting)
    else:
        _render_highload(p, n_bue, r_bue, spec, msg3_extra, msg5_extra, override, rejecting)
    return Overlay(spec.start, msg3_extra, msg5_extra, override, rejecting)


def _render_attack(p, n_bue, r_bue, spec, rate, override, rejecting):
    d = override.size
    # connected UEs can leave but not join while the attacker holds resources
    held = np.minimum.accumulate(n_bue[spec.start:spec.end])
    override[:] = np.round(held).astype(np.int64)
    # fractional-remainder carry keeps the long-run accept:reject split exact
    acc_credit = rej_credit = 0.0
    i = 0
    while i < d:
        k = spec.start + i
        t_a, t_r = accept_reject_durations(p, LoadState(held[i], r_bue[k]), rate[i])
        acc_credit += t_a
        n_acc = math.floor(acc_credit)
        if t_r == 0:
            # no overload at this load; re-check once the accept span elapses
            n_acc = max(n_acc, 1)
            acc_credit = max(acc_credit - n_acc, 0.0)
            i += n_acc
            continue
        acc_credit -= n_acc
        rej_credit += t_r
        n_rej = math.floor(rej_credit)
        rej_credit -= n_rej
        lo = min(i + n_acc, d)
        hi = min(lo + n_rej, d)
        rejecting[lo:hi] = True
        i = hi


def _render_highload(p, n_bue, r_bue, spec, rate, msg5_extra, override, rejecting):
    n = float(n_bue[spec.start])
    for i in range(override.size):
        if n >= p.n_max:
            rejecting[i] = True
            override[i] = p.n_max
            continue
        k = spec.start + i
        n += min(rate[i] + r_bue[k], p.n_max - n)
        msg5_extra[i] = rate[i]
        override[i] = int(round(n))
