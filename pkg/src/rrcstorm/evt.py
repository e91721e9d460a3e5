"""Windowed Peaks-Over-Threshold estimation with a method-of-moments GPD fit.

The streaming machine (:class:`PotState`) keeps the last ``window_len``
non-anomalous values, separated from the present by a ``gap_len`` buffer,
and classifies each new value as normal, extreme or anomalous against two
thresholds: the initial (peak) threshold ``t`` and the adaptive anomaly
threshold derived from the GPD tail fitted to the excesses over ``t``.

Anomalies never enter the window. Dropping them outright truncates the tail
the next fit sees, and repeated refits then walk the threshold down (each
window turnover loses another ``q`` of mass). With ``censor`` enabled an
excluded anomaly leaves a placeholder at the threshold it crossed; the
placeholder joins the tail estimate on the same schedule the value would
have followed through gap and window, but is never stored in the window.
"""

from __future__ import annotations

import bisect
import logging
import math
import heapq
from collections import deque
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_1d, check_positive_int, check_probability

logger = logging.getLogger(__name__)

GAMMA_ZERO_TOL = 1e-6


class DegenerateSample(ValueError):
    """The excess sample has zero variance (or fewer than two points)."""


class MomentViolation(ValueError):
    """The fitted shape is outside the region where the GPD variance exists."""


class NumericOverflow(ArithmeticError):
    """The threshold power term is not finite."""


class SupportViolation(ValueError):
    """A fitted bounded tail (gamma < 0) ends before the largest observed excess."""


class TailDirection(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


class SampleClass(str, Enum):
    NORMAL = "normal"
    EXTREME = "extreme"
    ANOMALY = "anomaly"


@dataclass(frozen=True)
class GpdParams:
    gamma: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not self.gamma < 0.5:
            raise MomentViolation(f"gamma must be < 1/2, got {self.gamma}")


@dataclass(frozen=True)
class PotConfig:
    """Configuration of one streaming POT machine.

    ``bounds`` optionally clamps the anomaly threshold (the R1 ratio lives
    in [0, 1]). ``min_peaks`` and ``quantile_step`` drive the widening of the
    initial threshold when the window holds too few peaks.

    ``censor`` keeps excluded anomalies as placeholders at the level they
    crossed. ``support_fallback`` chooses what a refit does when the fitted
    endpoint falls inside the observed excesses: use the exponential tail
    (True) or keep the previous threshold like the other fit failures.
    """

    window_len: int
    gap_len: int
    q: float
    init_quantile: float
    direction: TailDirection = TailDirection.UPPER
    bounds: Optional[tuple] = None
    min_peaks: int = 10
    quantile_step: float = 0.01
    censor: bool = True
    support_fallback: bool = True

    def __post_init__(self):
        object.__setattr__(self, "direction", TailDirection(self.direction))
        check_positive_int(self.window_len, "window_len")
        check_positive_int(self.gap_len, "gap_len", allow_zero=True)
        check_probability(self.q, "q")
        check_probability(self.init_quantile, "init_quantile")
        # P(X < t) < 1 - q on the upper side; mirrored on the lower side
        if self.direction is TailDirection.UPPER and not self.init_quantile < 1 - self.q:
            raise ValueError("init_quantile must be below 1 - q for an upper tail")
        if self.direction is TailDirection.LOWER and not self.init_quantile > self.q:
            raise ValueError("init_quantile must be above q for a lower tail")
        if self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not lo < hi:
                raise ValueError(f"bounds must be increasing, got {self.bounds}")
            object.__setattr__(self, "bounds", (lo, hi))
        check_positive_int(self.min_peaks, "min_peaks")
        if not 0 < self.quantile_step < 0.5:
            raise ValueError("quantile_step must lie in (0, 0.5)")

    @property
    def bootstrap_len(self) -> int:
        return self.window_len + self.gap_len

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = self.direction.value
        d["bounds"] = list(self.bounds) if self.bounds is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PotConfig":
        d = dict(d)
        if d.get("bounds") is not None:
            d["bounds"] = tuple(d["bounds"])
        return cls(**d)


def estimate_gpd_mom(excesses: Sequence[float]) -> GpdParams:
    """Fit GPD shape and scale from the first two sample moments.

    Uses the unbiased (``n - 1``) sample variance. Raises
    :class:`DegenerateSample` for fewer than two points or zero variance and
    :class:`MomentViolation` when the fitted shape is ``>= 1/2``.
    """
    y = np.asarray(excesses, dtype=float)
    if y.size < 2:
        raise DegenerateSample(f"need at least two excesses, got {y.size}")
    mu = float(y.mean())
    s2 = float(y.var(ddof=1))
    if not s2 > 0:
        raise DegenerateSample("excesses have zero variance")
    ratio = mu * mu / s2
    gamma = 0.5 * (1.0 - ratio)
    sigma = 0.5 * mu * (1.0 + ratio)
    if gamma >= 0.5:
        raise MomentViolation(f"fitted gamma {gamma} violates gamma < 1/2")
    return GpdParams(gamma=gamma, sigma=sigma)


def anomaly_threshold(
    t: float,
    params: GpdParams,
    q: float,
    n_total: int,
    n_peaks: int,
    direction: TailDirection = TailDirection.UPPER,
) -> float:
    """Tail quantile at risk ``q`` implied by a GPD fitted over threshold ``t``.

    Not clamped; callers apply any domain bounds.
    """
    if n_peaks < 1 or n_total < n_peaks:
        raise ValueError(f"need 1 <= n_peaks <= n_total, got {n_peaks}, {n_total}")
    r = q * n_total / n_peaks
    if not r > 0:
        raise ValueError("q * n_total / n_peaks must be positive")
    gamma, sigma = params.gamma, params.sigma
    if abs(gamma) < GAMMA_ZERO_TOL:
        offset = -sigma * math.log(r)
    else:
        try:
            power = r ** (-gamma)
        except OverflowError as exc:
            raise NumericOverflow(str(exc)) from exc
        offset = sigma / gamma * (power - 1.0)
    if not math.isfinite(offset):
        raise NumericOverflow(f"threshold offset is not finite ({offset})")
    if TailDirection(direction) is TailDirection.UPPER:
        return t + offset
    return t - offset


def _tail_quantile(sorted_values: np.ndarray, level: float, direction: TailDirection) -> float:
    # nearest rank, rounded toward the tail being modelled
    n = len(sorted_values)
    pos = level * (n - 1)
    if direction is TailDirection.UPPER:
        idx = math.ceil(pos - 1e-12)
    else:
        idx = math.floor(pos + 1e-12)
    return float(sorted_values[min(max(idx, 0), n - 1)])


def initial_threshold(window: Sequence[float], init_quantile: float, direction=TailDirection.UPPER) -> float:
    """Empirical quantile of ``window`` used as the peak threshold.

    Nearest-rank on the sorted window; the rank is rounded toward the tail so
    the threshold never sits inside the bulk (``1..100`` at 0.98 gives 99).
    """
    values = np.sort(check_1d(window, "window", min_len=1))
    return _tail_quantile(values, init_quantile, TailDirection(direction))


def compute_r1(msg3: float, msg5: float) -> float:
    """Share of RRC setups completed in one second, clamped to [0, 1].

    A second without any Msg3 counts as fully completed.
    """
    if msg3 < 0 or msg5 < 0:
        raise ValueError("message counts must be non-negative")
    if msg3 == 0:
        return 1.0
    return min(max(msg5 / msg3, 0.0), 1.0)


class _Ring:
    """Fixed-capacity FIFO of floats with a sorted mirror for tail queries."""

    def __init__(self, capacity: int):
        self._buf = np.empty(capacity, dtype=float)
        self._head = 0
        self._size = 0
        self.sorted: list = []

    def __len__(self):
        return self._size

    def append(self, value: float) -> Optional[float]:
        """Append ``value``; returns the evicted oldest value when full."""
        cap = self._buf.size
        idx = (self._head + self._size) % cap
        evicted = None
        if self._size < cap:
            self._size += 1
        else:
            evicted = float(self._buf[idx])
            self._head = (self._head + 1) % cap
            del self.sorted[bisect.bisect_left(self.sorted, evicted)]
        self._buf[idx] = value
        bisect.insort(self.sorted, float(value))
        return evicted

    def values(self) -> np.ndarray:
        idx = (self._head + np.arange(self._size)) % self._buf.size
        return self._buf[idx]

    def reset(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)[-self._buf.size:]
        self._buf[: values.size] = values
        self._head = 0
        self._size = values.size
        self.sorted = sorted(values.tolist())


class PotState:
    """Single-feature streaming POT machine.

    The first ``window_len + gap_len`` values only fill the state; from then
    on :meth:`update` returns the class of every value. Anomalies never enter
    the window, extremes trigger a refit, normal values leave the thresholds
    untouched.
    """

    def __init__(self, cfg: PotConfig):
        self.cfg = cfg
        self._window = _Ring(cfg.window_len)
        self._gap: deque = deque()
        self._boot: list = []
        self.ready = False
        self.t: Optional[float] = None
        self.t_anomaly: Optional[float] = None
        self.params: Optional[GpdParams] = None
        self.excesses = np.empty(0)
        self.n_fit_failures = 0
        self.upper = cfg.direction is TailDirection.UPPER
        # censored anomalies: [enter_at, leave_at, level] in admission counts
        self._n_admitted = 0
        self._censored: deque = deque()

    @property
    def window(self) -> np.ndarray:
        return self._window.values()

    def classify(self, value: float) -> SampleClass:
        if not self.ready:
            raise RuntimeError("POT state is still bootstrapping")
        if self._beyond(value, self.t_anomaly, inclusive=True):
            return SampleClass.ANOMALY
        if self._beyond(value, self.t, inclusive=False):
            return SampleClass.EXTREME
        return SampleClass.NORMAL

    def _beyond(self, value, level, inclusive):
        if self.upper:
            return value >= level if inclusive else value > level
        return value <= level if inclusive else value < level

    def update(self, value: float, admit: Optional[bool] = None) -> Optional[SampleClass]:
        """Consume one value; returns ``None`` while bootstrapping.

        By default anomalies stay out of the window and everything else is
        admitted. An explicit ``admit`` overrides that choice, which lets a
        caller combining several features decide exclusion itself.
        """
        value = float(value)
        if not self.ready:
            self._boot.append(value)
            if len(self._boot) >= self.cfg.bootstrap_len:
                self._finish_bootstrap()
            return None
        cls = self.classify(value)
        self.commit(value, cls, admit)
        return cls

    def commit(self, value: float, cls: SampleClass, admit: Optional[bool] = None, censor: Optional[bool] = None):
        """Apply the window update for a value already classified as ``cls``.

        A rejected anomaly is censored (see module docstring) unless
        ``censor`` is False or the config disables it; rejected values that
        are not anomalies are simply skipped.
        """
        if admit is None:
            admit = cls is not SampleClass.ANOMALY
        if not admit:
            if cls is SampleClass.ANOMALY and (self.cfg.censor if censor is None else censor):
                self._censor(self.t_anomaly, self.cfg.gap_len)
            return
        moved = self._admit(value)
        # refit whenever the excess set may have changed: a new peak arrived,
        # a value beyond t entered or left the window, or a placeholder
        # became active or expired
        if (
            cls is not SampleClass.NORMAL
            or self._age_censored()
            or any(self._beyond(v, self.t, inclusive=False) for v in moved)
        ):
            self._refit()

    def _censor(self, level: float, wait: int, life: Optional[int] = None):
        if not math.isfinite(level):
            return
        life = self.cfg.window_len if life is None else life
        start = self._n_admitted + wait
        self._censored.append([start, start + life, float(level)])

    def _age_censored(self) -> bool:
        """Advance the admission clock; True if the active placeholder set changed."""
        self._n_admitted += 1
        now = self._n_admitted
        changed = False
        while self._censored and self._censored[0][1] <= now:
            self._censored.popleft()
            changed = True
        return changed or any(rec[0] == now for rec in self._censored)

    def _active_censored(self) -> list:
        now = self._n_admitted
        return sorted(level for start, leave, level in self._censored if start <= now < leave)

    def _admit(self, value: float) -> list:
        """Push ``value`` through gap and window; returns values that entered or left the window."""
        if self.cfg.gap_len == 0:
            entered = value
        else:
            self._gap.append(value)
            if len(self._gap) <= self.cfg.gap_len:
                return []
            entered = self._gap.popleft()
        evicted = self._window.append(entered)
        return [entered] if evicted is None else [entered, evicted]

    def _finish_bootstrap(self):
        boot = np.asarray(self._boot, dtype=float)
        n = self.cfg.window_len
        self._window.reset(boot[:n])
        self._gap = deque(boot[n:].tolist())
        self._boot = []
        self._refit(initial=True)
        self.ready = True
        # keep the invariant that anomalous values are absent from the window;
        # trimmed values are censored with the remaining life they would have had
        for _ in range(10):
            vals = self._window.values()
            drop = self._beyond_mask(vals, self.t_anomaly)
            gap = np.asarray(self._gap, dtype=float)
            gap_drop = self._beyond_mask(gap, self.t_anomaly)
            if not drop.any() and not gap_drop.any():
                break
            if self.cfg.censor:
                for i in np.flatnonzero(drop):
                    self._censor(self.t_anomaly, 0, int(i) + 1)
                for j in np.flatnonzero(gap_drop):
                    self._censor(self.t_anomaly, int(j) + 1)
            self._window.reset(vals[~drop])
            self._gap = deque(gap[~gap_drop].tolist())
            if len(self._window) == 0:
                break
            self._refit()

    def _beyond_mask(self, arr, level):
        return arr >= level if self.upper else arr <= level

    def _select_peaks(self, sorted_vals: list):
        cfg = self.cfg
        n = len(sorted_vals)
        level = cfg.init_quantile
        step = -cfg.quantile_step if self.upper else cfg.quantile_step
        while True:
            t = _tail_quantile(sorted_vals, level, cfg.direction)
            if self.upper:
                cut = bisect.bisect_right(sorted_vals, t)
                n_peaks = n - cut
            else:
                cut = bisect.bisect_left(sorted_vals, t)
                n_peaks = cut
            if n_peaks >= cfg.min_peaks:
                break
            nxt = level + step
            if (self.upper and nxt < 0.5) or (not self.upper and nxt > 0.5):
                break
            level = nxt
        if self.upper:
            return t, np.array(sorted_vals[cut:]) - t
        return t, t - np.array(sorted_vals[:cut])

    def _exponential_threshold(self, t: float, excess: np.ndarray, n: int) -> float:
        """Threshold under a gamma = 0 tail whose scale is the mean excess."""
        if not excess.size:
            # no tail observed yet: nothing on this side counts as anomalous
            return math.inf if self.upper else -math.inf
        offset = max(float(excess.mean()) * math.log(excess.size / (self.cfg.q * n)), 0.0)
        return t + offset if self.upper else t - offset

    def _refit(self, initial: bool = False):
        cfg = self.cfg
        sorted_vals = self._window.sorted
        if len(sorted_vals) == 0:
            return
        censored = self._active_censored()
        if censored:
            sorted_vals = list(heapq.merge(sorted_vals, censored))
        n = len(sorted_vals)
        t, excess = self._select_peaks(sorted_vals)
        params = None
        try:
            params = estimate_gpd_mom(excess)
            if params.gamma < 0 and params.sigma / -params.gamma < excess.max():
                raise SupportViolation(f"fitted endpoint {params.sigma / -params.gamma:.6g} lies inside the excesses")
            th = anomaly_threshold(t, params, cfg.q, n, excess.size, cfg.direction)
        except (DegenerateSample, MomentViolation, SupportViolation, NumericOverflow) as exc:
            self.n_fit_failures += 1
            if self.t_anomaly is not None and not initial and not (
                isinstance(exc, SupportViolation) and cfg.support_fallback
            ):
                logger.debug("POT refit failed (%s); keeping threshold %.6g", exc, self.t_anomaly)
                return
            params = None
            th = self._exponential_threshold(t, excess, n)
            logger.debug("POT bootstrap fit failed (%s); exponential fallback %.6g", exc, th)
        if cfg.bounds is not None:
            th = min(max(th, cfg.bounds[0]), cfg.bounds[1])
        self.t = t
        self.t_anomaly = th
        self.params = params
        self.excesses = excess

    def to_dict(self) -> dict:
        """JSON-serializable snapshot for checkpoint/resume."""
        return {
            "config": self.cfg.to_dict(),
            "ready": self.ready,
            "t": self.t,
            "t_anomaly": self.t_anomaly,
            "params": None if self.params is None else asdict(self.params),
            "window": self._window.values().tolist(),
            "gap": list(self._gap),
            "bootstrap": list(self._boot),
            "excesses": self.excesses.tolist(),
            "n_admitted": self._n_admitted,
            "censored": [list(rec) for rec in self._censored],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PotState":
        state = cls(PotConfig.from_dict(d["config"]))
        state.ready = bool(d["ready"])
        state.t = d["t"]
        state.t_anomaly = d["t_anomaly"]
        state.params = None if d["params"] is None else GpdParams(**d["params"])
        state._window.reset(np.asarray(d["window"], dtype=float))
        state._gap = deque(float(v) for v in d["gap"])
        state._boot = [float(v) for v in d["bootstrap"]]
        state.excesses = np.asarray(d["excesses"], dtype=float)
        state._n_admitted = int(d.get("n_admitted", 0))
        state._censored = deque([int(a), int(b), float(c)] for a, b, c in d.get("censored", []))
        return state


class PotThresholder(BaseEstimator):
    """Estimator wrapper around :class:`PotState`.

    ``fit`` bootstraps on the leading ``window_len + gap_len`` values and
    streams the rest; ``predict`` keeps streaming and returns 1 for anomalies,
    0 otherwise.
    """

    def __init__(
        self,
        window_len=180,
        gap_len=30,
        q=3e-4,
        init_quantile=0.98,
        direction="upper",
        bounds=None,
        censor=True,
        support_fallback=True,
    ):
        self.window_len = window_len
        self.gap_len = gap_len
        self.q = q
        self.init_quantile = init_quantile
        self.direction = direction
        self.bounds = bounds
        self.censor = censor
        self.support_fallback = support_fallback

    def _config(self) -> PotConfig:
        return PotConfig(
            window_len=self.window_len,
            gap_len=self.gap_len,
            q=self.q,
            init_quantile=self.init_quantile,
            direction=self.direction,
            bounds=self.bounds,
            censor=self.censor,
            support_fallback=self.support_fallback,
        )

    def fit(self, X, y=None):
        cfg = self._config()
        x = check_1d(X, min_len=cfg.bootstrap_len)
        self.state_ = PotState(cfg)
        self.classes_ = self._stream(x)
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "state_"):
            self.state_ = PotState(self._config())
        self._stream(check_1d(X))
        return self

    def _stream(self, x: np.ndarray) -> list:
        state = self.state_
        out, th = [], []
        for v in x:
            out.append(state.update(v))
            th.append(state.t_anomaly if state.ready else np.nan)
        self.thresholds_ = np.asarray(th, dtype=float)
        return out

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "state_"):
            raise RuntimeError("PotThresholder is not fitted")
        classes = self._stream(check_1d(X))
        return np.array([c is SampleClass.ANOMALY for c in classes], dtype=int)
