"""File formats: trace / labels / decision CSVs, alert and report JSON, run manifests.

All writers go through :func:`atomic_write` so a crashed run never leaves a
half-written file behind. JSON is written with sorted keys and a trailing
newline so equal inputs give equal bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .detector import Alert, Decision
from .trace import ScenarioLabels, Trace, TrafficSample

TRACE_HEADER = ("ts", "msg3", "msg5", "n_bue")
LABELS_HEADER = ("period_start", "kind", "rate")
DECISION_HEADER = ("ts", "msg3", "r1", "th_msg3", "th_r1", "class", "alert_id", "verdict")
MANIFEST_NAME = "manifest.json"


class DataError(ValueError):
    """Malformed input data; ``row`` is the 1-based line number when known."""

    def __init__(self, msg: str, path=None, row: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}:{row}: " if row is not None else f"{path}: "
        super().__init__(where + msg)
        self.path = path
        self.row = row


class ManifestMismatch(ValueError):
    pass


def atomic_write(path, data, mode: str = "w"):
    """Write ``data`` to ``path`` via a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows: Iterable) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


# trace ----------------------------------------------------------------------


def write_trace(path, trace: Trace):
    rows = zip(trace.ts.tolist(), trace.msg3.tolist(), trace.msg5.tolist(), trace.n_bue.tolist())
    atomic_write(path, csv_text(TRACE_HEADER, rows))


def iter_trace(path) -> Iterator[TrafficSample]:
    """Stream samples from a trace CSV, validating each row.

    Timestamps must advance by exactly one second; counts are non-negative
    integers with ``msg5 <= msg3``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
            raise DataError(f"expected header {','.join(TRACE_HEADER)}", path, 1)
        prev = None
        for row in reader:
            line = reader.line_num
            if len(row) != 4:
                raise DataError(f"expected 4 fields, got {len(row)}", path, line)
            try:
                ts, msg3, msg5, n_bue = (int(v) for v in row)
            except ValueError:
                raise DataError(f"non-integer field in {row}", path, line) from None
            if min(msg3, msg5, n_bue) < 0:
                raise DataError("counts must be non-negative", path, line)
            if msg5 > msg3:
                raise DataError("msg5 exceeds msg3", path, line)
            if prev is not None and ts != prev + 1:
                raise DataError(f"timestamp {ts} does not follow {prev} by 1 s", path, line)
            prev = ts
            yield TrafficSample(ts, msg3, msg5, n_bue)


def read_trace(path) -> Trace:
    cols = list(zip(*iter_trace(path)))
    if not cols:
        raise DataError("trace has no rows", path)
    return Trace(*(np.array(c, dtype=np.int64) for c in cols))


# labels ---------------------------------------------------------------------


def write_labels(path, labels: ScenarioLabels):
    rows = []
    for start, kind, rate in zip(labels.period_start.tolist(), labels.kind, labels.rate.tolist()):
        rows.append((start, kind.value, "" if np.isnan(rate) else f"{rate:.6f}"))
    atomic_write(path, csv_text(LABELS_HEADER, rows))


def read_labels(path) -> ScenarioLabels:
    starts, kinds, rates = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABELS_HEADER:
            raise DataError(f"expected header {','.join(LABELS_HEADER)}", path, 1)
        for row in reader:
            line = reader.line_num
            if len(row) != 3:
                raise DataError(f"expected 3 fields, got {len(row)}", path, line)
            try:
                starts.append(int(row[0]))
                kinds.append(row[1])
                rates.append(float(row[2]) if row[2] else math.nan)
                ScenarioLabels([0], [row[1]], [0.0])
            except ValueError as exc:
                raise DataError(str(exc), path, line) from None
    if len(starts) < 1:
        raise DataError("labels file has no rows", path)
    d = np.diff(starts)
    if d.size and (np.any(d != d[0]) or d[0] <= 0):
        raise DataError("period starts must be evenly spaced and increasing", path)
    period_len = int(d[0]) if d.size else 300
    return ScenarioLabels(starts, kinds, rates, period_len)


# decisions and alerts -------------------------------------------------------


def decision_row(d: Decision) -> tuple:
    return (
        d.ts,
        d.msg3,
        f"{d.r1:.6f}",
        _fmt(d.th_msg3),
        _fmt(d.th_r1),
        d.cls.value,
        "" if d.alert_id is None else d.alert_id,
        "" if d.verdict is None else d.verdict.value,
    )


def write_decisions(path, decisions: Iterable[Decision]):
    atomic_write(path, csv_text(DECISION_HEADER, (decision_row(d) for d in decisions)))


class DecisionWriter:
    """Incremental decision-log writer for streaming runs; commit with :meth:`close`."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.", suffix=".tmp")
        self._fh = os.fdopen(fd, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(DECISION_HEADER)

    def write(self, d: Decision):
        self._w.writerow(decision_row(d))

    def close(self):
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self):
        self._fh.close()
        if os.path.exists(self._tmp):
            os.unlink(self._tmp)


def read_decision_range(path) -> tuple:
    """First and last ``ts`` in a decision log."""
    first = last = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DECISION_HEADER:
            raise DataError(f"expected header {','.join(DECISION_HEADER)}", path, 1)
        for row in reader:
            try:
                ts = int(row[0])
            except (ValueError, IndexError):
                raise DataError(f"bad decision row {row}", path, reader.line_num) from None
            if first is None:
                first = ts
            last = ts
    if first is None:
        raise DataError("decision log has no rows", path)
    return first, last


def write_alerts(path, alerts: Iterable[Alert]):
    atomic_write(path, dumps_json([a.to_dict() for a in alerts]))


def read_alerts(path) -> list:
    try:
        with open(path) as fh:
            return [Alert.from_dict(d) for d in json.load(fh)]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed alerts file ({exc})", path) from None


# manifests ------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(outdir, manifest: dict):
    atomic_write(Path(outdir) / MANIFEST_NAME, dumps_json(manifest))


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ManifestMismatch(f"no {MANIFEST_NAME} in {directory}") from None
    except json.JSONDecodeError as exc:
        raise ManifestMismatch(f"unreadable manifest {path}: {exc}") from None


def output_digest(manifest: dict, name: str) -> Optional[str]:
    return manifest.get("outputs", {}).get(name, {}).get("sha256")
