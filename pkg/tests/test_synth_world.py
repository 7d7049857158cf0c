import json

import numpy as np
import pytest
from scipy.stats import kstest

from tempora.audio_analysis import stft, track_pitch
from tempora.errors import ProfileError, TemporaError
from tempora.media_core import SpeedProfile
from tempora.synth_world import (SceneSpec, ToneSpec, load_dataset, log_uniform, make_dataset, render_clip,
                                 render_frames)


def test_spec_validation():
    with pytest.raises(TemporaError):
        SceneSpec("cube", 1.0)
    with pytest.raises(TemporaError):
        SceneSpec("oscillator", 0.0)
    with pytest.raises(TemporaError):
        SceneSpec("oscillator", 1.0, resolution=(8, 48))
    with pytest.raises(TemporaError):
        ToneSpec(5000.0)


def _ball_centroid(frames):
    # the ball is brighter than anything in the background
    mask = frames > 0.6
    yy, xx = np.mgrid[0:frames.shape[1], 0:frames.shape[2]]
    return np.array([[(xx * m).sum() / m.sum(), (yy * m).sum() / m.sum()] for m in mask])


def test_oscillator_cycle_length():
    # 1 Hz orbit at speed 0.5 and 30 fps: one revolution every 60 frames
    scene = SceneSpec("oscillator", 1.0, (48, 48), 4.0, seed=3)
    clip = render_clip(scene, None, SpeedProfile.constant(0.5, 4.0), fps=30)
    c = _ball_centroid(clip.video.frames)
    assert np.allclose(c[60], c[0], atol=0.2)
    assert np.linalg.norm(c[30] - c[0]) > 10  # half a turn away


def test_tone_frequency_scales_with_speed():
    scene = SceneSpec("bouncing_ball", 36.0, duration_s=2.0)
    clip = render_clip(scene, ToneSpec(440.0), SpeedProfile.constant(0.5, 2.0))
    hz = np.exp(np.nanmedian(track_pitch(stft(clip.audio)).log_freq))
    assert abs(hz - 220.0) < stft(clip.audio).bin_hz


def test_render_is_deterministic():
    scene = SceneSpec("translating_gradient", 7.5, seed=9, noise=1e-3)
    a = render_clip(scene, ToneSpec(), SpeedProfile.constant(0.3, 3.2))
    b = render_clip(scene, ToneSpec(), SpeedProfile.constant(0.3, 3.2))
    assert a.video == b.video and a.audio == b.audio


def test_true_speed_only_for_single_segment():
    scene = SceneSpec("oscillator", 0.48, duration_s=2.0)
    assert render_clip(scene, None, SpeedProfile.constant(0.2, 2.0)).true_speed == 0.2
    assert render_clip(scene, None, SpeedProfile.steps([0.2, 0.4], [1.0], 2.0)).true_speed is None
    with pytest.raises(ProfileError):
        render_clip(scene, None, SpeedProfile.constant(0.2, 1.0))


def test_displacement_proportional_to_speed():
    scene = SceneSpec("oscillator", 1.0, (64, 64), 3.0, seed=1)
    steps = {}
    for s in (0.25, 0.5, 1.0):
        c = _ball_centroid(render_clip(scene, None, SpeedProfile.constant(s, 3.0)).video.frames)
        steps[s] = np.median(np.linalg.norm(np.diff(c, axis=0), axis=1))
    assert steps[0.25] >= 0.5
    assert steps[0.5] / steps[0.25] == pytest.approx(2.0, rel=0.05)
    assert steps[1.0] / steps[0.5] == pytest.approx(2.0, rel=0.05)


def test_phase_continuous_audio_at_speed_change():
    scene = SceneSpec("oscillator", 0.48, duration_s=2.0)
    clip = render_clip(scene, ToneSpec(300.0), SpeedProfile.steps([0.5, 1.0], [1.0], 2.0))
    x = clip.audio.samples
    # no jump larger than the largest step the faster tone can make
    assert np.abs(np.diff(x)).max() <= 0.5 * 2 * np.pi * 300 / 16000 * 1.01


def test_noise_is_seeded():
    t = np.arange(10) / 30
    a = render_frames(SceneSpec("oscillator", 0.48, seed=4, noise=0.01), t)
    b = render_frames(SceneSpec("oscillator", 0.48, seed=4, noise=0.01), t)
    clean = render_frames(SceneSpec("oscillator", 0.48, seed=4), t)
    assert np.array_equal(a, b)
    assert 0.005 < np.std(a - clean) < 0.015


def test_log_uniform_is_uniform_in_log():
    draws = log_uniform(np.random.default_rng(0), 0.01, 1.0, size=2000)
    u = (np.log(draws) - np.log(0.01)) / (np.log(1.0) - np.log(0.01))
    assert kstest(u, "uniform").statistic < 0.05


def test_make_dataset_constant_speeds(tmp_path):
    manifest = make_dataset(30, (0.01, 1.0), 0.0, seed=3, out_dir=tmp_path, duration_s=1.0)
    assert len(manifest) == 30
    for entry in manifest:
        meta = json.loads((tmp_path / entry["sidecar"]).read_text())
        assert len(meta["segments"]) == 1
        assert 0.01 <= meta["segments"][0]["speed"] <= 1.0
        assert {"clip_id", "segments", "scene", "seed"} <= set(meta)


def test_make_dataset_all_changes(tmp_path):
    make_dataset(20, (0.01, 1.0), 1.0, seed=4, out_dir=tmp_path, duration_s=2.0)
    for clip, profile in load_dataset(tmp_path):
        assert len(profile.change_times) == 1
        lo, hi = sorted(profile.speeds)
        assert hi / lo >= 1.3
        assert clip.true_speed is None


def test_make_dataset_degenerate_range(tmp_path):
    make_dataset(5, (1.0, 1.0), 0.0, seed=5, out_dir=tmp_path, duration_s=1.0)
    assert all(c.true_speed == 1.0 for c, _ in load_dataset(tmp_path))


def test_make_dataset_is_byte_deterministic(tmp_path):
    make_dataset(4, seed=6, out_dir=tmp_path / "a", duration_s=1.0)
    make_dataset(4, seed=6, out_dir=tmp_path / "b", duration_s=1.0, threads=3)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_make_dataset_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        make_dataset(1, out_dir=blocker / "sub")
