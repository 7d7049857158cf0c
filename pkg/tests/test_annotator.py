import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tempora.annotator as annotator
from tempora.annotator import (AnnotationRecord, annotate, compute_bucket_id, read_manifest, segment_by_changes)
from tempora.errors import DomainError, TemporaError
from tempora.media_core import FrameSequence, SpeedProfile
from tempora.media_io import quantized, write_clip
from tempora.synth_world import plan_clip, render_clip

FPS = 30


def indexed_video(n):
    """Frame i holds the value i / n everywhere, so a window knows where it sits."""
    return FrameSequence(np.broadcast_to((np.arange(n) / n)[:, None, None], (n, 4, 4)), FPS)


def stub_detector(monkeypatch, n, changes):
    """Replace the learned detector with an oracle for changes at the given frames."""

    def detect(model, window):
        first = int(round(window.frames[0, 0, 0] * n))
        m = len(window)
        return (1.0, True) if any(first + m / 3 <= c <= first + 2 * m / 3 for c in changes) else (0.0, False)

    monkeypatch.setattr(annotator, "detect", detect)


# -- buckets ---------------------------------------------------------------------------


def test_bucket_anchors():
    assert compute_bucket_id(0.01) == 0
    assert compute_bucket_id(0.1) == 5
    assert compute_bucket_id(1.0) == 9
    assert compute_bucket_id(0.001) == 0 and compute_bucket_id(3.0) == 9


def test_bucket_errors():
    with pytest.raises(DomainError):
        compute_bucket_id(0.0)
    with pytest.raises(DomainError):
        compute_bucket_id(-1.0)
    with pytest.raises(TemporaError):
        compute_bucket_id(0.5, 0)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1e-4, 10.0), b=st.floats(1e-4, 10.0), n=st.integers(1, 30))
def test_bucket_is_monotone(a, b, n):
    lo, hi = sorted((a, b))
    assert 0 <= compute_bucket_id(lo, n) <= compute_bucket_id(hi, n) <= n - 1


@pytest.mark.parametrize("n", [1, 2, 5, 10, 17])
def test_bucket_is_surjective(n):
    speeds = np.exp(np.linspace(np.log(0.01), 0.0, 5000))
    assert {compute_bucket_id(s, n) for s in speeds} == set(range(n))


def test_record_validation():
    good = dict(clip_id="a", source_path="x", start_frame=0, end_frame=10, predicted_speed=0.5, bucket_id=8,
                iterations_used=3, detector_confidence=None, tool_version="0", raw_predicted_speed=0.5)
    AnnotationRecord(**good)
    with pytest.raises(TemporaError):
        AnnotationRecord(**(good | {"end_frame": 0}))
    with pytest.raises(DomainError):
        AnnotationRecord(**(good | {"predicted_speed": 0.0}))


# -- segmentation ---------------------------------------------------------------------------


def test_no_positive_windows_gives_one_span(monkeypatch):
    stub_detector(monkeypatch, 180, [])
    assert segment_by_changes(indexed_video(180), None) == [(0, 180)]


def test_short_video_is_not_segmented(monkeypatch):
    stub_detector(monkeypatch, 30, [15])
    assert segment_by_changes(indexed_video(30), None) == [(0, 30)]


def test_middle_change_splits_at_middle(monkeypatch):
    stub_detector(monkeypatch, 180, [90])
    spans = segment_by_changes(indexed_video(180), None)
    assert len(spans) == 2
    assert abs(spans[0][1] - 90) <= 30  # one stride


def test_two_changes_give_three_spans(monkeypatch):
    stub_detector(monkeypatch, 240, [60, 150])
    spans = segment_by_changes(indexed_video(240), None)
    assert len(spans) == 3
    assert spans[0][0] == 0 and spans[-1][1] == 240
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    assert abs(spans[0][1] - 60) <= 30 and abs(spans[1][1] - 150) <= 30


@settings(max_examples=60, deadline=None)
@given(n=st.integers(20, 400), seed=st.integers(0, 10_000), stride_s=st.sampled_from([0.25, 0.5, 1.0]))
def test_spans_partition_the_video(n, seed, stride_s):
    rng = np.random.default_rng(seed)
    flags = rng.random(n) < 0.3

    def detect(model, window):
        first = int(round(window.frames[0, 0, 0] * n))
        return float(flags[first]), bool(flags[first])

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(annotator, "detect", detect)
        spans = segment_by_changes(indexed_video(n), None, 2.0, stride_s)
    assert spans[0][0] == 0 and spans[-1][1] == n
    assert all(a < b for a, b in spans)
    assert all(x[1] == y[0] for x, y in zip(spans, spans[1:]))
    if len(spans) > 1:
        assert all(b - a >= 60 for a, b in spans)


# -- end to end ---------------------------------------------------------------------------------


def clip_at(speeds, changes, duration, seed):
    plan = plan_clip(seed, f"probe{seed}", (0.5, 0.5), 0, duration_s=duration)
    scene = dataclasses.replace(plan.scene, duration_s=duration)
    profile = SpeedProfile.steps(speeds, changes, duration)
    return quantized(render_clip(scene, plan.tone, profile, clip_id=f"probe{seed}"))


def test_single_speed_clip_gives_one_record(speed_benchmark, detector_benchmark):
    # 0.125 sits inside bucket 5 rather than on its lower edge
    clip = clip_at([0.125], [], 3.2, seed=41)
    records = annotate(clip, speed_benchmark["model"], detector_benchmark["model"])
    assert len(records) == 1
    rec = records[0]
    assert (rec.start_frame, rec.end_frame) == (0, len(clip.video))
    assert rec.bucket_id == 5
    assert abs(np.log(rec.predicted_speed / 0.125)) < 0.3


def test_step_clip_gives_two_buckets(speed_benchmark, detector_benchmark):
    clip = clip_at([0.5, 0.05], [3.2], 6.4, seed=42)
    records = annotate(clip, speed_benchmark["model"], detector_benchmark["model"])
    assert len(records) == 2
    assert records[0].bucket_id > records[1].bucket_id


def test_directory_with_errors_and_exports(tmp_path, speed_benchmark, detector_benchmark):
    src = tmp_path / "in"
    (src / "sub").mkdir(parents=True)
    write_clip(clip_at([0.3], [], 3.2, seed=43), src / "a.chrn")
    write_clip(clip_at([0.8, 0.2], [2.4], 4.8, seed=44), src / "sub" / "b.chrn")
    (src / "broken.chrn").write_bytes(b"CHRN\x01")
    out = tmp_path / "manifest.jsonl"
    est, det = speed_benchmark["model"], detector_benchmark["model"]
    records = annotate(src, est, det, out_path=out, export_dir=tmp_path / "spans")

    back, summary = read_manifest(out)
    assert back == records
    assert summary["n_errors"] == 1 and summary["errors"][0]["source_path"] == "broken.chrn"
    assert [r.source_path for r in records] == sorted(r.source_path for r in records)
    assert {r.source_path for r in records} == {"a.chrn", "sub/b.chrn"}
    assert all(r.tool_version for r in records)
    assert len(list((tmp_path / "spans").glob("*.chrn"))) == len(records)

    # exported spans are homogeneous: each comes back as one span in the same bucket
    again = annotate(tmp_path / "spans", est, det)
    by_id = {r.clip_id: r.bucket_id for r in records}
    assert len(again) == len(records)
    assert all(by_id[r.source_path[:-5]] == r.bucket_id for r in again)


def test_empty_directory_gives_empty_manifest(tmp_path, speed_benchmark, detector_benchmark):
    (tmp_path / "empty").mkdir()
    out = tmp_path / "m.jsonl"
    assert annotate(tmp_path / "empty", speed_benchmark["model"], detector_benchmark["model"], out_path=out) == []
    lines = out.read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["_summary"]["n_records"] == 0


def test_missing_input_raises(tmp_path, speed_benchmark, detector_benchmark):
    with pytest.raises(FileNotFoundError):
        annotate(tmp_path / "nope", speed_benchmark["model"], detector_benchmark["model"])
