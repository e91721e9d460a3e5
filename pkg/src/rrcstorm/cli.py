"""Command-line entry point: ``rrcstorm synth | detect | eval``.

Exit codes:
  0  success
  2  configuration or usage error
  3  malformed input data
  4  inconsistent inputs (manifest or time-range mismatch)
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baseline import InsufficientData, fit_baseline, run_static
from .config import AppConfig, ConfigError, load_config
from .detector import AlertTracker, DetectorState, run
from .evaluation import (
    METHODS,
    TABLE_COLUMNS,
    RangeMismatch,
    ScenarioSuite,
    run_scenario,
    score,
    second_confusion,
    summarize,
    table_rows,
)
from .io import (
    DataError,
    DecisionWriter,
    ManifestMismatch,
    atomic_write,
    csv_text,
    dumps_json,
    file_digest,
    iter_trace,
    output_digest,
    read_alerts,
    read_labels,
    read_manifest,
    write_alerts,
    write_labels,
    write_manifest,
    write_trace,
)
from .synth import synth_scenario

logger = logging.getLogger("rrcstorm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONSISTENCY = 0, 2, 3, 4
OUT_ENV = "RRCSTORM_OUT"

EPILOG = """exit codes: 0 ok, 2 config/usage error, 3 malformed data, 4 inconsistent inputs.
Without --out, results go under $RRCSTORM_OUT (default ./runs)/<command>."""


class UsageError(ValueError):
    pass


def _versions() -> dict:
    import sklearn

    return {"rrcstorm": __version__, "python": platform.python_version(), "numpy": np.__version__, "scikit-learn": sklearn.__version__}


def _out_dir(arg: Optional[str], command: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, "runs")) / command


def _manifest(command: str, cfg: Optional[AppConfig], seeds, inputs: dict, outdir: Path, outputs, started: float) -> dict:
    return {
        "command": command,
        "config_hash": None if cfg is None else cfg.hash(),
        "config": None if cfg is None else cfg.to_dict(),
        "seeds": list(seeds),
        "versions": _versions(),
        "inputs": {k: {"path": str(p), "sha256": file_digest(p)} for k, p in inputs.items()},
        "outputs": {name: {"path": name, "sha256": file_digest(outdir / name)} for name in outputs},
        "duration_s": round(time.perf_counter() - started, 3),
    }


# commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.scenario.seed = args.seed
    outdir = _out_dir(args.out, "synth")
    trace, labels, episodes = synth_scenario(cfg.scenario)
    write_trace(outdir / "trace.csv", trace)
    write_labels(outdir / "labels.csv", labels)
    inputs = {"config": args.config} if args.config else {}
    write_manifest(outdir, _manifest("synth", cfg, [cfg.scenario.seed], inputs, outdir, ["trace.csv", "labels.csv"], started))
    logger.info("wrote %d seconds, %d episodes to %s", len(trace), len(episodes), outdir)
    return EXIT_OK


def _reference_thresholds(path, day: int, labels_path, k: float):
    """Fit the static thresholds from day ``day`` of the trace (one streaming pass)."""
    labels = read_labels(labels_path) if labels_path else None
    ts, msg3 = [], []
    first = None
    for s in iter_trace(path):
        first = s.ts if first is None else first
        lo = first + day * 86400
        if s.ts >= lo + 86400:
            break
        if s.ts >= lo:
            ts.append(s.ts)
            msg3.append(s.msg3)
    ts = np.asarray(ts, dtype=np.int64)
    keep = None
    if labels is not None and ts.size:
        period = (ts - labels.period_start[0]) // labels.period_len
        inside = (period >= 0) & (period < len(labels))
        keep = inside.copy()
        keep[inside] = ~labels.anomalous()[period[inside]]
    try:
        return fit_baseline(ts, msg3, keep, k)
    except InsufficientData as exc:
        raise DataError(f"reference day {day}: {exc}", path) from None


def cmd_detect(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    method = args.method
    if method == "gaussian":
        day = args.reference_day if args.reference_day is not None else cfg.baseline.reference_day
        if day is None:
            raise UsageError("--method gaussian requires --reference-day")
    outdir = _out_dir(args.out, "detect")
    d = cfg.detector
    if method == "evt":
        state = DetectorState(d)
        tracker = state.tracker
        stream = run(iter_trace(args.trace), state=state)
    else:
        th = _reference_thresholds(args.trace, day, args.labels, cfg.baseline.k)
        tracker = AlertTracker(d.confirm_count, d.r2_highload_level, d.r2_horizon, d.n_max)
        stream = run_static(th, iter_trace(args.trace), tracker)
    writer = DecisionWriter(outdir / "decisions.csv")
    last = None
    try:
        for decision in stream:
            writer.write(decision)
            last = decision.ts
    except BaseException:
        writer.abort()
        raise
    writer.close()
    if last is None:
        raise DataError("trace has no rows", args.trace)
    alerts = tracker.finish(last)
    write_alerts(outdir / "alerts.json", alerts)
    inputs = {"trace": args.trace}
    if args.config:
        inputs["config"] = args.config
    if args.labels:
        inputs["labels"] = args.labels
    manifest = _manifest("detect", cfg, [cfg.scenario.seed], inputs, outdir, ["decisions.csv", "alerts.json"], started)
    manifest["method"] = method
    write_manifest(outdir, manifest)
    logger.info("%s: %d alerts -> %s", method, len(alerts), outdir)
    return EXIT_OK


def _check_pair(synth_dir: Path, detect_dir: Path):
    """The detect run must have consumed this synth run's trace, and its outputs be intact."""
    sm = read_manifest(synth_dir)
    dm = read_manifest(detect_dir)
    if sm.get("command") != "synth" or dm.get("command") != "detect":
        raise ManifestMismatch("expected a synth run and a detect run")
    want = output_digest(sm, "trace.csv")
    got = dm.get("inputs", {}).get("trace", {}).get("sha256")
    if want is None or want != got:
        raise ManifestMismatch(f"{detect_dir} was not produced from the trace in {synth_dir}")
    for directory, manifest, names in ((synth_dir, sm, ("labels.csv", "trace.csv")), (detect_dir, dm, ("decisions.csv", "alerts.json"))):
        for name in names:
            if file_digest(directory / name) != output_digest(manifest, name):
                raise ManifestMismatch(f"{directory / name} does not match its manifest")
    return sm, dm


def _plot_files(outdir: Path, decisions_path: Path, trace_path: Path, labels, n_max: int):
    """Plot-data CSVs (msg3 and r1 with thresholds, r2 during alerts) plus per-second alert flags."""
    lo = int(labels.period_start[0])

    def kind(ts):
        p = (ts - lo) // labels.period_len
        return labels.kind[p].value if 0 <= p < len(labels) else ""

    msg3_rows, r1_rows, r2_rows, flags = [], [], [], []
    active = {}
    with open(decisions_path, newline="") as fh:
        for row in csv.DictReader(fh):
            ts = int(row["ts"])
            lab = kind(ts)
            msg3_rows.append((ts, row["msg3"], row["th_msg3"], lab))
            r1_rows.append((ts, row["r1"], row["th_r1"], lab))
            flags.append((ts, row["alert_id"] != ""))
            if row["alert_id"]:
                active[ts] = row["alert_id"]
    for s in iter_trace(trace_path):
        if s.ts in active:
            r2_rows.append((s.ts, active[s.ts], f"{min(s.n_bue / n_max, 1.0):.6f}", s.n_bue))

    atomic_write(outdir / "plot_msg3.csv", csv_text(("ts", "msg3", "th_msg3", "label"), msg3_rows))
    atomic_write(outdir / "plot_r1.csv", csv_text(("ts", "r1", "th_r1", "label"), r1_rows))
    atomic_write(outdir / "plot_r2.csv", csv_text(("ts", "alert_id", "r2", "n_bue"), r2_rows))
    return ["plot_msg3.csv", "plot_r1.csv", "plot_r2.csv"], flags


def cmd_eval(args) -> int:
    if args.suite:
        return _eval_suite(args)
    if not (args.synth and args.detect):
        raise UsageError("eval needs --synth and --detect run directories (or --suite)")
    started = time.perf_counter()
    synth_dir, detect_dir = Path(args.synth), Path(args.detect)
    sm, dm = _check_pair(synth_dir, detect_dir)
    outdir = _out_dir(args.out, "eval")
    labels = read_labels(synth_dir / "labels.csv")
    alerts = read_alerts(detect_dir / "alerts.json")
    n_max = ((dm.get("config") or {}).get("detector") or {}).get("n_max", 300)
    plots, flags = _plot_files(outdir, detect_dir / "decisions.csv", synth_dir / "trace.csv", labels, n_max)
    if not flags:
        raise DataError("decision log has no rows", detect_dir / "decisions.csv")
    report = score(labels, alerts, (flags[0][0], flags[-1][0]))
    report.method = dm.get("method", "evt")
    report.seed = (sm.get("seeds") or [None])[0]
    out = report.to_dict()
    out["per_second"] = second_confusion(labels, flags)
    atomic_write(outdir / "report.json", dumps_json(out))
    row = table_rows([report])[0]
    atomic_write(outdir / "report.csv", _table_text([row]))
    manifest = _manifest(
        "eval",
        None,
        sm.get("seeds", []),
        {"labels": synth_dir / "labels.csv", "decisions": detect_dir / "decisions.csv", "alerts": detect_dir / "alerts.json"},
        outdir,
        ["report.json", "report.csv", *plots],
        started,
    )
    manifest["config_hash"] = dm.get("config_hash")
    write_manifest(outdir, manifest)
    print(_summary_line(report.to_dict()))
    return EXIT_OK


def _table_text(rows) -> str:
    return csv_text(TABLE_COLUMNS, ([r[c] for c in TABLE_COLUMNS] for r in rows))


def _summary_line(d: dict) -> str:
    lat = d["mean_latency"]
    lat_s = "n/a" if lat is None else f"{lat:.2f}s"
    return (
        f"{d['scenario'] or '-':<18} {d['method']:<8} acc {d['accuracy']:.4f}  prec {d['precision']:.4f}  "
        f"rec {d['recall']:.4f}  latency {lat_s}"
    )


def _eval_suite(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    suite = ScenarioSuite()
    names = args.scenarios.split(",") if args.scenarios else suite.names()
    for name in names:
        if name not in suite.scenarios:
            raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(suite.names())}")
    seeds = [int(s) for s in args.seeds.split(",")]
    outdir = _out_dir(args.out, "suite")
    reports = []
    for name in names:
        for seed in seeds:
            for method in METHODS:
                try:
                    res = run_scenario(name, seed, method, cfg.detector, suite)
                except (ValueError, ArithmeticError) as exc:
                    raise type(exc)(f"scenario {name} seed {seed} ({method}): {exc}") from exc
                reports.append(res.report)
    rows = table_rows(reports)
    atomic_write(outdir / "table.csv", _table_text(rows))
    atomic_write(outdir / "reports.json", dumps_json([r.to_dict() for r in reports]))
    lines = []
    for (name, method) in dict.fromkeys((r.scenario, r.method) for r in reports):
        s = summarize([r for r in reports if r.scenario == name and r.method == method])
        lines.append(_summary_line({**s, "scenario": name, "method": method}))
    summary = "\n".join(lines) + "\n"
    atomic_write(outdir / "summary.txt", summary)
    write_manifest(outdir, _manifest("suite", cfg, seeds, {}, outdir, ["table.csv", "reports.json", "summary.txt"], started))
    sys.stdout.write(summary)
    return EXIT_OK


# parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rrcstorm",
        description="Adaptive RRC signaling-storm detection: synthesize traffic, detect, evaluate.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a labelled trace", epilog=EPILOG)
    s.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    s.add_argument("--seed", type=int, help="override scenario.seed")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("detect", help="run a detector over a trace", epilog=EPILOG)
    d.add_argument("--trace", required=True, help="trace.csv to read")
    d.add_argument("--method", choices=METHODS, default="evt")
    d.add_argument("--config", help="TOML config file")
    d.add_argument("--reference-day", type=int, help="day index (from trace start) the gaussian baseline is fitted on")
    d.add_argument("--labels", help="labels.csv used to mask anomalies out of the reference day")
    d.add_argument("--out", help="output directory")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="score a detect run against its labels, or run the scenario suite", epilog=EPILOG)
    e.add_argument("--synth", help="synth output directory (labels and trace)")
    e.add_argument("--detect", help="detect output directory (decisions and alerts)")
    e.add_argument("--suite", action="store_true", help="run every named scenario with both methods")
    e.add_argument("--scenarios", help="comma-separated subset of the suite")
    e.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds for --suite")
    e.add_argument("--config", help="TOML config for --suite detector settings")
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"rrcstorm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"rrcstorm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ManifestMismatch, RangeMismatch) as exc:
        print(f"rrcstorm: inconsistent inputs: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
