"""Columnar containers for per-second traffic and per-period labels."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple

import numpy as np


class TrafficSample(NamedTuple):
    ts: int
    msg3: int
    msg5: int
    n_bue: int


class PeriodKind(str, Enum):
    NORMAL = "normal"
    ATTACK = "attack"
    HIGHLOAD = "highload"


@dataclass
class Trace:
    """Per-second gNB observables; ``ts`` is integer epoch seconds."""

    ts: np.ndarray
    msg3: np.ndarray
    msg5: np.ndarray
    n_bue: np.ndarray

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.msg3 = np.asarray(self.msg3, dtype=np.int64)
        self.msg5 = np.asarray(self.msg5, dtype=np.int64)
        self.n_bue = np.asarray(self.n_bue, dtype=np.int64)
        n = self.ts.size
        if not (self.msg3.size == self.msg5.size == self.n_bue.size == n):
            raise ValueError("trace columns must have equal length")

    def __len__(self):
        return self.ts.size

    def __iter__(self) -> Iterator[TrafficSample]:
        for row in zip(self.ts.tolist(), self.msg3.tolist(), self.msg5.tolist(), self.n_bue.tolist()):
            yield TrafficSample(*row)

    def __getitem__(self, sl) -> "Trace":
        if not isinstance(sl, slice):
            raise TypeError("Trace supports slice indexing only")
        return Trace(self.ts[sl], self.msg3[sl], self.msg5[sl], self.n_bue[sl])

    def to_array(self) -> np.ndarray:
        """``(n, 3)`` array of msg3, msg5, n_bue as used by the estimators."""
        return np.column_stack([self.msg3, self.msg5, self.n_bue])

    def copy(self) -> "Trace":
        return Trace(self.ts.copy(), self.msg3.copy(), self.msg5.copy(), self.n_bue.copy())


@dataclass
class ScenarioLabels:
    """One label per fixed-length period; ``rate`` is NaN for normal periods."""

    period_start: np.ndarray
    kind: list
    rate: np.ndarray
    period_len: int = 300

    def __post_init__(self):
        self.period_start = np.asarray(self.period_start, dtype=np.int64)
        self.kind = [PeriodKind(k) for k in self.kind]
        self.rate = np.asarray(self.rate, dtype=float)

    def __len__(self):
        return self.period_start.size

    def counts(self) -> dict:
        out = {k.value: 0 for k in PeriodKind}
        for k in self.kind:
            out[k.value] += 1
        return out

    def anomalous(self) -> np.ndarray:
        return np.array([k is not PeriodKind.NORMAL for k in self.kind], dtype=bool)
