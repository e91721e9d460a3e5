"""TOML run configuration.

Every tunable constant has a key whose default is the value the detector
and simulator use out of the box. Unknown keys are rejected so typos fail
loudly. Example::

    [scenario]
    seed = 3
    rate_policy = "availability"

    [detector.msg3]
    q = 3e-4
"""

from __future__ import annotations

import dataclasses
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detector import DetectorConfig, default_msg3_pot, default_r1_pot
from .storm import EpisodeSpec, GnbParams
from .synth import ConfigError, DiurnalProfile, ScenarioConfig

__all__ = ["AppConfig", "ConfigError", "load_config", "parse_config"]

_POT_KEYS = (
    "window_len", "gap_len", "q", "init_quantile", "min_peaks", "quantile_step", "censor",
    "support_fallback",
)
_DETECTOR_KEYS = ("confirm_count", "r2_highload_level", "r2_horizon", "features", "exclusion")
_SCENARIO_KEYS = (
    "seed", "days", "start_ts", "period_len", "warmup", "proportions", "rate_policy",
    "rate_max", "fraction_range", "target_availability", "load_window", "episodes",
)
_TUPLE_KEYS = {"proportions", "fraction_range", "morning", "midday", "evening", "features"}


@dataclass
class BaselineConfig:
    k: float = 3.0
    reference_day: Optional[int] = None

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if self.reference_day is not None and self.reference_day < 0:
            raise ValueError("reference_day must be >= 0")


@dataclass
class AppConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def to_dict(self) -> dict:
        sc = dataclasses.asdict(self.scenario)
        sc["episodes"] = [
            {**dataclasses.asdict(e), "kind": e.kind.value} for e in self.scenario.episodes
        ]
        return {
            "scenario": sc,
            "detector": self.detector.to_dict(),
            "baseline": dataclasses.asdict(self.baseline),
        }

    def hash(self) -> str:
        from .io import config_hash

        return config_hash(json.loads(json.dumps(self.to_dict())))


def _error(where: str, msg: str, key: Optional[str] = None) -> ConfigError:
    exc = ConfigError(f"{where}: {msg}")
    exc.section = where.strip("[]").split("]")[0] if where.startswith("[") else ""
    exc.key = key
    return exc


def _take(table: dict, allowed, where: str) -> dict:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise _error(where, f"unknown key(s) {', '.join(unknown)}", unknown[0])
    return {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in table.items()}


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise _error(f"[{name}]", "must be a table")
    return value


def _build(factory, kwargs: dict, where: str):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        # validation messages start with the offending field name
        m = re.match(r"\W*(\w+)", str(exc))
        key = m.group(1) if m and m.group(1) in kwargs else None
        raise _error(where, str(exc), key) from None


def _locate(text: str, section: str, key: Optional[str]) -> Optional[int]:
    """1-based line of ``key = ...`` inside ``[section]``, if present."""
    if not key:
        return None
    current = ""
    for n, line in enumerate(text.splitlines(), 1):
        head = re.match(r"\s*\[\[?\s*([\w.]+)\s*\]\]?", line)
        if head:
            current = head.group(1)
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return n
    return None


def parse_config(data: dict) -> AppConfig:
    """Validate a parsed TOML document into an :class:`AppConfig`."""
    top = _take(data, ("scenario", "gnb", "profile", "detector", "baseline"), "top level")

    gnb = _build(GnbParams, _take(_section(top, "gnb"), ("t_w", "n_max"), "[gnb]"), "[gnb]")
    profile_keys = [f.name for f in dataclasses.fields(DiurnalProfile)]
    profile = _build(DiurnalProfile, _take(_section(top, "profile"), profile_keys, "[profile]"), "[profile]")

    sc = _take(_section(top, "scenario"), _SCENARIO_KEYS, "[scenario]")
    episodes = []
    for i, ep in enumerate(sc.pop("episodes", [])):
        where = f"[[scenario.episodes]] #{i + 1}"
        episodes.append(_build(EpisodeSpec, _take(ep, ("kind", "rate", "start", "duration", "ramp"), where), where))
    scenario = _build(ScenarioConfig, {**sc, "episodes": episodes, "gnb": gnb, "profile": profile}, "[scenario]")

    det = dict(_section(top, "detector"))
    pots = {}
    for name, default in (("msg3", default_msg3_pot()), ("r1", default_r1_pot())):
        where = f"[detector.{name}]"
        raw = det.pop(name, {})
        if not isinstance(raw, dict):
            raise _error(where, "must be a table")
        pots[name] = _build(lambda **kw: dataclasses.replace(default, **kw), _take(raw, _POT_KEYS, where), where)
    det = _take(det, _DETECTOR_KEYS, "[detector]")
    detector = _build(
        DetectorConfig,
        {**det, "msg3_pot": pots["msg3"], "r1_pot": pots["r1"], "n_max": gnb.n_max},
        "[detector]",
    )

    baseline = _build(BaselineConfig, _take(_section(top, "baseline"), ("k", "reference_day"), "[baseline]"), "[baseline]")
    return AppConfig(scenario, detector, baseline)


def load_config(path=None) -> AppConfig:
    """Read and validate a TOML config; ``None`` gives the defaults."""
    if path is None:
        return AppConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data: Any = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return parse_config(data)
    except ConfigError as exc:
        line = _locate(text, getattr(exc, "section", ""), getattr(exc, "key", None))
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {exc}") from None
