from __future__ import annotations

import json

import pytest

from rrcstorm.cli import main
from rrcstorm.synth import DEFAULT_START_TS

ATTACK_START = DEFAULT_START_TS + 86400 + 15 * 3600 + 15 * 60

SINGLE_ATTACK_TOML = f"""
[scenario]
seed = 5
days = 2

[[scenario.episodes]]
kind = "attack"
rate = 100.0
start = {ATTACK_START}
duration = 900
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "single.toml"
    cfg.write_text(SINGLE_ATTACK_TOML)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "synth")]) == 0
    assert main(["detect", "--trace", str(root / "synth" / "trace.csv"), "--out", str(root / "detect")]) == 0
    assert main(["eval", "--synth", str(root / "synth"), "--detect", str(root / "detect"), "--out", str(root / "eval")]) == 0
    return root


def test_synth_outputs(pipeline):
    lines = (pipeline / "synth" / "trace.csv").read_text().splitlines()
    assert lines[0] == "ts,msg3,msg5,n_bue"
    assert len(lines) == 2 * 86400 + 1
    manifest = json.loads((pipeline / "synth" / "manifest.json").read_text())
    assert manifest["seeds"] == [5]
    assert set(manifest["outputs"]) == {"trace.csv", "labels.csv"}
    assert len(manifest["config_hash"]) == 64


def test_single_attack_gives_one_alert(pipeline):
    alerts = json.loads((pipeline / "detect" / "alerts.json").read_text())
    assert len(alerts) == 1
    assert alerts[0]["verdict"] == "attack"
    assert set(alerts[0]) >= {"alert_id", "onset_ts", "detect_ts", "verdict"}


def test_report_fields(pipeline, capsys):
    report = json.loads((pipeline / "eval" / "report.json").read_text())
    for key in ("accuracy", "precision", "recall", "mean_latency", "verdict_confusion", "per_second"):
        assert key in report
    assert report["recall"] == 1.0 and report["precision"] == 1.0
    for name in ("report.csv", "plot_msg3.csv", "plot_r1.csv", "plot_r2.csv", "manifest.json"):
        assert (pipeline / "eval" / name).exists()


def test_synth_is_byte_stable(pipeline, tmp_path):
    assert main(["synth", "--config", str(pipeline / "single.toml"), "--out", str(tmp_path)]) == 0
    for name in ("trace.csv", "labels.csv"):
        assert (tmp_path / name).read_bytes() == (pipeline / "synth" / name).read_bytes()


def test_default_synth_is_four_days(tmp_path):
    assert main(["synth", "--seed", "1", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "trace.csv") as fh:
        assert sum(1 for _ in fh) == 345600 + 1


def test_env_default_out(tmp_path, monkeypatch, pipeline):
    monkeypatch.setenv("RRCSTORM_OUT", str(tmp_path))
    assert main(["synth", "--config", str(pipeline / "single.toml")]) == 0
    assert (tmp_path / "synth" / "trace.csv").exists()


def test_infeasible_proportion_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[scenario]\nproportions = [1, 5, 4]\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "adjacent" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[detector]\nconfirm = 3\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert f"{cfg}:2" in capsys.readouterr().err


def test_gaussian_needs_reference_day(pipeline, tmp_path):
    trace = str(pipeline / "synth" / "trace.csv")
    assert main(["detect", "--trace", trace, "--method", "gaussian", "--out", str(tmp_path)]) == 2


def test_gaussian_detect(pipeline, tmp_path):
    trace = str(pipeline / "synth" / "trace.csv")
    labels = str(pipeline / "synth" / "labels.csv")
    args = ["detect", "--trace", trace, "--method", "gaussian", "--reference-day", "0", "--labels", labels]
    assert main(args + ["--out", str(tmp_path / "g")]) == 0
    manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
    assert manifest["method"] == "gaussian"
    assert main(["eval", "--synth", str(pipeline / "synth"), "--detect", str(tmp_path / "g"), "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "report.json").read_text())["recall"] == 1.0


def test_gap_in_trace_exit_3(tmp_path, capsys):
    trace = tmp_path / "t.csv"
    trace.write_text("ts,msg3,msg5,n_bue\n1,2,2,5\n2,2,2,5\n5,2,2,5\n")
    assert main(["detect", "--trace", str(trace), "--out", str(tmp_path / "d")]) == 3
    assert f"{trace}:4" in capsys.readouterr().err
    assert not (tmp_path / "d" / "decisions.csv").exists()


def test_missing_trace_exit_3(tmp_path):
    assert main(["detect", "--trace", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "d")]) == 3


def test_mismatched_runs_exit_4(pipeline, tmp_path):
    other = tmp_path / "synth"
    assert main(["synth", "--config", str(pipeline / "single.toml"), "--seed", "6", "--out", str(other)]) == 0
    args = ["eval", "--synth", str(other), "--detect", str(pipeline / "detect"), "--out", str(tmp_path / "e")]
    assert main(args) == 4


def test_tampered_output_exit_4(pipeline, tmp_path):
    import shutil

    det = tmp_path / "detect"
    shutil.copytree(pipeline / "detect", det)
    (det / "alerts.json").write_text("[]\n")
    args = ["eval", "--synth", str(pipeline / "synth"), "--detect", str(det), "--out", str(tmp_path / "e")]
    assert main(args) == 4


def test_eval_usage_error(tmp_path):
    assert main(["eval", "--out", str(tmp_path)]) == 2


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "exit codes" in capsys.readouterr().out
