import json

import pytest

from tempora.cli import main
from tempora.media_io import read_clip


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.endswith(".run.json")}


def synth(out, *extra):
    return main(["synth", "--n", "3", "--duration", "2.0", "--seed", "4", "--out", str(out), *extra])


def test_synth_is_byte_identical(tmp_path):
    assert synth(tmp_path / "a") == 0
    assert synth(tmp_path / "b", "--threads", "2") == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a and a == b


def test_run_manifest_records_resolved_flags(tmp_path):
    assert synth(tmp_path / "d") == 0
    run = json.loads((tmp_path / "d.run.json").read_text())
    assert run["status"] == "ok" and run["subcommand"] == "synth"
    assert "--noise" in run["argv"] and "--speed-min" in run["argv"]
    assert run["tool_version"]


def test_usage_error_exits_two(tmp_path, capsys):
    assert main(["synth"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["eval", "speed", "--pred", "x", "--gt", "y", "--tolerance", "abc"]) == 2


def test_runtime_error_exits_one_and_keeps_manifest(tmp_path):
    out = tmp_path / "report.json"
    code = main(["eval", "speed", "--pred", str(tmp_path / "missing.json"), "--gt", str(tmp_path / "x.json"),
                 "--out", str(out)])
    assert code == 1
    run = json.loads((tmp_path / "report.json.run.json").read_text())
    assert run["status"] == "error" and "missing.json" in run["error"]


def test_eval_speed_identity(tmp_path):
    speeds = {"a": 0.1, "b": 0.5, "c": 0.9}
    (tmp_path / "p.json").write_text(json.dumps(speeds))
    out = tmp_path / "r.json"
    assert main(["eval", "speed", "--pred", str(tmp_path / "p.json"), "--gt", str(tmp_path / "p.json"),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["rmse_log"] == 0.0 and report["exp_rmse"] == 1.0
    assert report["spearman_rs"] == pytest.approx(1.0)


def test_audio_detection_and_event_eval(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--n", "4", "--change-fraction", "1.0", "--duration", "3.0", "--seed", "2",
                 "--out", str(data)]) == 0
    events = tmp_path / "events.json"
    assert main(["detect-changes", "--input", str(data), "--method", "audio", "--out", str(events),
                 "--plots", str(tmp_path / "plots")]) == 0
    result = json.loads(events.read_text())
    assert len(result["clips"]) == 4
    assert len(list((tmp_path / "plots").glob("*.svg"))) == 4
    scores = tmp_path / "scores.json"
    assert main(["eval", "events", "--pred", str(events), "--gt", str(data), "--out", str(scores)]) == 0
    assert json.loads(scores.read_text())["n_true"] == 4


def test_flow_detection_and_window_eval(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--n", "4", "--change-fraction", "0.5", "--duration", "4.0", "--out", str(data)]) == 0
    pred = tmp_path / "flow.json"
    assert main(["detect-changes", "--input", str(data), "--method", "flow", "--out", str(pred)]) == 0
    report = tmp_path / "acc.json"
    assert main(["eval", "changes", "--pred", str(pred), "--gt", str(data), "--out", str(report)]) == 0
    assert 0.0 <= json.loads(report.read_text())["accuracy"] <= 1.0


def test_visual_detection_needs_model(tmp_path):
    data = tmp_path / "data"
    assert synth(data) == 0
    assert main(["detect-changes", "--input", str(data), "--method", "visual",
                 "--out", str(tmp_path / "v.json")]) == 1


def test_blur_synth_outputs(tmp_path):
    data = tmp_path / "data"
    assert synth(data) == 0
    out = tmp_path / "pairs"
    assert main(["blur-synth", "--input", str(data), "--window", "4", "--stride", "4", "--out", str(out)]) == 0
    index = json.loads((out / "pairs.json").read_text())
    assert len(index) == 3
    first = index[0]
    inputs = read_clip(out / first["input"])
    target = read_clip(out / first["target"])
    assert len(inputs.video) == first["n_input"] and len(target.video) == first["n_target"]
    assert inputs.video.native_fps == pytest.approx(30 / 4)
