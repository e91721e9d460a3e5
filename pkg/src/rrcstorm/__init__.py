"""Adaptive detection of RRC signaling storms with streaming peaks-over-threshold estimates."""

__version__ = "0.1.0"

from .baseline import GaussianBaseline, PeriodThresholds, detect_static, fit_baseline
from .detector import DetectorConfig, StormDetector, Verdict, detect
from .evaluation import EvalReport, ScenarioSuite, run_scenario, run_suite, score
from .evt import (
    GpdParams,
    PotConfig,
    PotState,
    PotThresholder,
    SampleClass,
    TailDirection,
    anomaly_threshold,
    compute_r1,
    estimate_gpd_mom,
    initial_threshold,
)
from .storm import EpisodeSpec, GnbParams, LoadState, availability, rate_for_target_availability
from .synth import DiurnalProfile, ScenarioConfig, synth_scenario
from .trace import ScenarioLabels, Trace, TrafficSample

__all__ = [
    "DetectorConfig",
    "DiurnalProfile",
    "EpisodeSpec",
    "EvalReport",
    "GaussianBaseline",
    "GnbParams",
    "GpdParams",
    "LoadState",
    "PeriodThresholds",
    "PotConfig",
    "PotState",
    "PotThresholder",
    "SampleClass",
    "ScenarioConfig",
    "ScenarioLabels",
    "ScenarioSuite",
    "StormDetector",
    "TailDirection",
    "Trace",
    "TrafficSample",
    "Verdict",
    "anomaly_threshold",
    "availability",
    "compute_r1",
    "detect",
    "detect_static",
    "estimate_gpd_mom",
    "fit_baseline",
    "initial_threshold",
    "rate_for_target_availability",
    "run_scenario",
    "run_suite",
    "score",
    "synth_scenario",
]
