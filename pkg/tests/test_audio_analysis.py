import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempora.audio_analysis import (audio_events, detect_pitch_changes, events_from_json,
                                    events_to_json, harvest_labels, middle_third_label, stft, track_pitch)
from tempora.errors import InsufficientAudioError, InvalidBandError, MissingAudioError
from tempora.media_core import AudioTrack, Clip, FrameSequence, SpeedProfile, resample_audio
from tempora.synth_world import SceneSpec, ToneSpec, render_clip

SR = 16000


def tone(hz, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return AudioTrack(amp * np.sin(2 * np.pi * hz * t), sr)


def stepped_clip(speeds, changes, duration, base=440.0):
    scene = SceneSpec("oscillator", 0.48, (32, 32), duration)
    return render_clip(scene, ToneSpec(base), SpeedProfile.steps(speeds, changes, duration))


def test_stft_peak_bin_for_440():
    spec = stft(tone(440))
    assert spec.bin_hz == pytest.approx(SR / 2048)
    assert np.all(np.argmax(spec.magnitudes, axis=1) == 56)


def test_stft_silence_and_dc():
    assert np.all(stft(AudioTrack(np.zeros(4096), SR)).magnitudes == 0)
    dc = stft(AudioTrack(np.full(4096, 0.3), SR)).magnitudes
    assert np.all(np.argmax(dc, axis=1) == 0)


def test_stft_errors():
    with pytest.raises(InsufficientAudioError):
        stft(AudioTrack(np.zeros(100), SR))
    with pytest.raises(Exception):
        stft(tone(440), window=1000)


def test_pitch_of_pure_tone():
    track = track_pitch(stft(tone(440)))
    assert track.voiced.all()
    assert np.all(np.abs(track.hz - 440) <= 2)


def test_pitch_after_two_times_speed_up():
    fast = resample_audio(tone(440, 2.0), 2.0)
    track = track_pitch(stft(fast))
    hz = track.hz[~np.isnan(track.log_freq)]
    assert np.all(np.abs(hz - 880) <= 4)


def test_silence_is_unvoiced():
    track = track_pitch(stft(AudioTrack(np.zeros(8000), SR)))
    assert not track.voiced.any() and np.isnan(track.log_freq).all()


def test_band_validation():
    with pytest.raises(InvalidBandError):
        track_pitch(stft(tone(440)), (500.0, 100.0))
    with pytest.raises(InvalidBandError):
        track_pitch(stft(tone(440)), (0.0, 20000.0))


@settings(max_examples=25, deadline=None)
@given(hz=st.floats(150, 900), r=st.sampled_from([1.25, 1.5, 2.0, 3.0]))
def test_resampling_shifts_log_pitch_by_log_rate(hz, r):
    base = tone(hz, 2.0)
    spec = stft(base)
    a = np.nanmedian(track_pitch(spec).log_freq)
    b = np.nanmedian(track_pitch(stft(resample_audio(base, r))).log_freq)
    bin_log = math.log1p(spec.bin_hz / (r * hz))  # one bin at the shifted pitch, in log units
    assert abs((b - a) - math.log(r)) <= bin_log


def test_octave_step_gives_one_up_event():
    clip = stepped_clip([0.5, 1.0], [1.0], 2.0, base=880.0)  # 440 Hz then 880 Hz
    events = audio_events(clip.audio)
    assert len(events) == 1
    e = events[0]
    assert abs(e.time_s - 1.0) <= 0.1
    assert e.direction == "up"
    assert e.magnitude == pytest.approx(math.log(2), abs=0.05)


def test_constant_tone_has_no_events():
    assert audio_events(tone(440, 3.0)) == []


def test_three_segments_give_two_ordered_events():
    clip = stepped_clip([1.0, 0.5, 0.9], [1.0, 2.0], 3.0)
    events = audio_events(clip.audio)
    assert [e.direction for e in events] == ["down", "up"]
    assert events[0].time_s == pytest.approx(1.0, abs=0.1)
    assert events[1].time_s == pytest.approx(2.0, abs=0.1)


@pytest.mark.parametrize("gain", [0.01, 0.3, 2.0])
def test_event_count_ignores_gain(gain):
    clip = stepped_clip([1.0, 0.5, 0.9], [1.0, 2.0], 3.0)
    scaled = AudioTrack(np.clip(clip.audio.samples * gain, -1, 1), SR)
    assert len(audio_events(scaled)) == len(audio_events(clip.audio))


def test_events_are_separated_by_a_window():
    clip = stepped_clip([1.0, 0.4, 1.0, 0.4], [0.8, 1.6, 2.4], 3.2)
    spec = stft(clip.audio)
    track = track_pitch(spec)
    events = detect_pitch_changes(track, window_frames=5)
    times = [e.time_s for e in events]
    assert times == sorted(times)
    assert all(b - a >= 5 * track.hop_s - 1e-9 for a, b in zip(times, times[1:]))


def test_events_json_round_trip():
    events = audio_events(stepped_clip([0.5, 1.0], [1.0], 2.0).audio)
    assert events_from_json(events_to_json(events)) == events


def test_middle_third_examples():
    assert middle_third_label([1.0], 0.0, 2.0) == 1
    assert middle_third_label([0.2], 0.0, 2.0) == 0
    assert middle_third_label([], 0.0, 2.0) == 0
    assert middle_third_label([0.67], 0.0, 2.0, margin_s=0.032) is None


def test_harvest_labels_on_clean_step():
    clip = stepped_clip([0.5, 1.0], [2.0], 4.0)
    windows = harvest_labels(clip, 2.0, 0.5)
    by_start = {w.start_s: w.label for w in windows}
    assert by_start[1.0] == 1  # change at the window centre
    assert by_start[0.0] == 0 and by_start[2.0] == 0
    assert all(w.end_frame - w.start_frame == 60 for w in windows)


def test_harvest_labels_all_negative_without_events():
    clip = stepped_clip([0.7], [], 4.0)
    assert {w.label for w in harvest_labels(clip, 2.0)} == {0}


def test_harvest_labels_needs_audio():
    clip = Clip(FrameSequence(np.zeros((60, 4, 4)), 30))
    with pytest.raises(MissingAudioError):
        harvest_labels(clip)
