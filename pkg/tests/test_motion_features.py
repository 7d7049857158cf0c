import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempora.errors import InsufficientLengthError, TemporaError
from tempora.media_core import FrameSequence, SpeedProfile, subsample
from tempora.motion_features import (FeatureConfig, calibrate_threshold, extract_features, flow_baseline_detect,
                                     flow_baseline_ratio, middle_third_slice, motion_profile, smooth,
                                     uniform_indices)
from tempora.synth_world import SceneSpec, render_clip


def oscillator(speeds, changes=(), duration=2.0, freq=0.48, res=(48, 48), noise=0.0):
    scene = SceneSpec("oscillator", freq, res, duration, seed=2, noise=noise)
    return render_clip(scene, None, SpeedProfile.steps(list(speeds), list(changes), duration)).video


def test_profile_trivial_cases():
    same = FrameSequence(np.full((2, 4, 4), 0.3), 30)
    assert motion_profile(same).magnitudes.tolist() == [0.0]
    flip = FrameSequence(np.stack([np.zeros((4, 4)), np.ones((4, 4))]), 30)
    assert motion_profile(flip).magnitudes.tolist() == [1.0]
    with pytest.raises(InsufficientLengthError):
        motion_profile(FrameSequence(np.zeros((1, 4, 4)), 30))


def test_profile_moving_square():
    # a 10%-area square jumps to fresh background: both footprints change
    h, w = 20, 20
    a = np.full((h, w), 0.2)
    b = a.copy()
    a[0:4, 0:10] = 0.8  # 40 px = 10% of 400
    b[10:14, 10:20] = 0.8
    mag = motion_profile(FrameSequence(np.stack([a, b]), 30)).magnitudes[0]
    assert mag == pytest.approx(2 * 0.10 * 0.6)


@settings(max_examples=30, deadline=None)
@given(offset=st.floats(-0.3, 0.3), seed=st.integers(0, 500))
def test_profile_invariant_to_constant_image(offset, seed):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(0.3, 0.7, (6, 5, 5))
    bias = np.full((5, 5), offset) * rng.random((5, 5))
    a = motion_profile(FrameSequence(frames, 30)).magnitudes
    b = motion_profile(FrameSequence(frames + bias, 30)).magnitudes
    assert np.allclose(a, b, atol=1e-12)


def test_feature_length_and_hash():
    cfg = FeatureConfig(16, (1, 2, 4), ("mean_abs", "p95_abs", "changed_frac"))
    assert cfg.length == 123
    video = oscillator([0.5])
    fv = extract_features(video, 16, (1, 2, 4), ("mean_abs", "p95_abs", "changed_frac"))
    assert len(fv) == 123 and fv.config_hash == cfg.config_hash
    assert FeatureConfig(16, (4, 1, 2)).config_hash == FeatureConfig(16, (1, 2, 4)).config_hash


def test_feature_config_validation():
    with pytest.raises(TemporaError):
        FeatureConfig(16, (3,))
    with pytest.raises(TemporaError):
        FeatureConfig(16, (1,), ("median",))
    with pytest.raises(TemporaError):
        FeatureConfig(4, (1, 4))
    with pytest.raises(InsufficientLengthError):
        extract_features(FrameSequence(np.zeros((10, 4, 4)), 30), 16)


def test_constant_video_gives_zero_features():
    fv = extract_features(FrameSequence(np.full((20, 6, 6), 0.4), 30), 16, stats=("mean_abs", "p95_abs", "changed_frac"))
    assert np.all(fv.values == 0)


def test_features_are_deterministic():
    v = oscillator([0.3], noise=1e-3)
    assert np.array_equal(extract_features(v).values, extract_features(v).values)


def test_subsampled_stride_one_matches_stride_two():
    # with 31 frames, uniform selection of 16 picks every other frame exactly
    v = oscillator([0.5], duration=31 / 30)
    assert uniform_indices(31, 16).tolist() == list(range(0, 31, 2))
    fast = subsample(v, 2)
    n = len(fast)
    a = extract_features(fast, n, (1,)).values
    b = extract_features(v, 31, (2,)).values[0::2]
    assert np.allclose(a, b, rtol=0.05)


def test_motion_increases_with_speed():
    energy = [motion_profile(oscillator([s])).magnitudes.mean() for s in (0.1, 0.2, 0.4, 0.8)]
    assert all(b > a for a, b in zip(energy, energy[1:]))


def test_smooth_and_middle_third():
    assert smooth(np.ones(7)).tolist() == [1.0] * 7
    assert smooth(np.array([0, 0, 5, 0, 0.0]))[2] == pytest.approx(1.0)
    s = middle_third_slice(60)
    assert (s.start, s.stop) == (20, 39)


def test_flow_baseline_examples():
    steady = oscillator([0.5], duration=2.0)
    assert not flow_baseline_detect(steady, 1.1)
    step = oscillator([0.2, 0.8], [1.0], duration=2.0)
    assert flow_baseline_ratio(step) > 2.0 and flow_baseline_detect(step, 2.0)
    assert flow_baseline_detect(step, 1.0)
    with pytest.raises(InsufficientLengthError):
        flow_baseline_ratio(FrameSequence(np.zeros((5, 4, 4)), 30))


def test_calibrate_threshold():
    assert calibrate_threshold([1.0, 1.1, 3.0, 4.0], [0, 0, 1, 1]) == pytest.approx(2.05)
    t = calibrate_threshold([1.0, 2.0], [1, 1])
    assert t < 1.0
    with pytest.raises(TemporaError):
        calibrate_threshold([], [])
