"""Pitch-shift cues for playback-speed changes.

Speeding a recording up by ``k`` multiplies every frequency in it by ``k``,
so a step in playback speed shows up as a step in log pitch of ``ln k``.
This module tracks the dominant pitch of a mono track and finds those steps.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import hann

from .errors import (InsufficientAudioError, InsufficientLengthError, InvalidBandError,
                     InvalidFactorError, MissingAudioError)
from .media_core import AudioTrack, Clip

DEFAULT_WINDOW = 2048
DEFAULT_HOP = 512
DEFAULT_BAND = (50.0, 4000.0)
DEFAULT_MIN_RATIO = 1.3
DEFAULT_CHANGE_WINDOW_S = 0.25
VOICED_FRACTION = 0.01
MEDIAN_WIDTH = 5


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (frames, bins)
    hop_s: float
    bin_hz: float
    t0_s: float = 0.0  # time of the first frame's centre

    @property
    def frame_times(self) -> np.ndarray:
        return self.t0_s + self.hop_s * np.arange(self.magnitudes.shape[0])


@dataclass(frozen=True)
class PitchTrack:
    log_freq: np.ndarray  # natural log of Hz; NaN where unvoiced
    voiced: np.ndarray
    hop_s: float
    t0_s: float = 0.0

    def __len__(self):
        return len(self.log_freq)

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + self.hop_s * np.arange(len(self))

    @property
    def hz(self) -> np.ndarray:
        return np.exp(self.log_freq)


@dataclass(frozen=True)
class SpeedChangeEvent:
    time_s: float
    direction: str  # "up" | "down"
    magnitude: float  # |ln pitch ratio|
    confidence: float

    def to_json(self) -> dict:
        return asdict(self)


def events_to_json(events: list[SpeedChangeEvent]) -> str:
    return json.dumps([e.to_json() for e in events], indent=1)


def events_from_json(text: str) -> list[SpeedChangeEvent]:
    return [SpeedChangeEvent(**d) for d in json.loads(text)]


def stft(audio: AudioTrack, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Hann-windowed magnitude spectrogram, one row per hop."""
    if window < 64 or window & (window - 1):
        raise InvalidFactorError(f"window must be a power of two >= 64, got {window}")
    if not 0 < hop <= window:
        raise InvalidFactorError(f"hop must lie in (0, window], got {hop}")
    if len(audio) < window:
        raise InsufficientAudioError(f"audio has {len(audio)} samples, window needs {window}")
    frames = sliding_window_view(audio.samples, window)[::hop]
    mags = np.abs(np.fft.rfft(frames * hann(window, sym=False), axis=1))
    sr = audio.sample_rate
    return Spectrogram(mags, hop / sr, sr / window, (window / 2) / sr)


def _nan_median_filter(values: np.ndarray, width: int) -> np.ndarray:
    half = width // 2
    padded = np.pad(values, half, constant_values=np.nan)
    windows = sliding_window_view(padded, width)
    out = np.full_like(values, np.nan)
    ok = ~np.isnan(values)
    if ok.any():
        out[ok] = np.nanmedian(windows[ok], axis=1)
    return out


def track_pitch(spec: Spectrogram, band: tuple[float, float] = DEFAULT_BAND) -> PitchTrack:
    """Dominant in-band frequency per frame, refined by parabolic interpolation.

    Frames whose in-band energy is below 1% of the frame's total are
    unvoiced (NaN). The voiced log-frequency track is median-filtered over
    5 frames.
    """
    lo_hz, hi_hz = band
    n_bins = spec.magnitudes.shape[1]
    nyquist = spec.bin_hz * (n_bins - 1)
    if not (0 <= lo_hz < hi_hz <= nyquist + 1e-9):
        raise InvalidBandError(f"band {band} must satisfy 0 <= lo < hi <= {nyquist:g} Hz")
    lo_bin = math.ceil(lo_hz / spec.bin_hz)
    hi_bin = min(math.floor(hi_hz / spec.bin_hz), n_bins - 1)
    if hi_bin < lo_bin:
        raise InvalidBandError(f"band {band} contains no frequency bins at {spec.bin_hz:g} Hz resolution")

    mags = spec.magnitudes
    power = mags ** 2
    total = power.sum(axis=1)
    inband = mags[:, lo_bin:hi_bin + 1]
    voiced = (total > 0) & (power[:, lo_bin:hi_bin + 1].sum(axis=1) >= VOICED_FRACTION * total)

    peak = np.argmax(inband, axis=1) + lo_bin
    rows = np.arange(mags.shape[0])
    inner = (peak > lo_bin) & (peak < hi_bin)
    offset = np.zeros(len(peak))
    with np.errstate(divide="ignore", invalid="ignore"):
        lm = np.log(np.maximum(mags, 1e-300))
        a = lm[rows[inner], peak[inner] - 1]
        b = lm[rows[inner], peak[inner]]
        c = lm[rows[inner], peak[inner] + 1]
        denom = a - 2 * b + c
        delta = np.where(denom < 0, 0.5 * (a - c) / denom, 0.0)
    offset[inner] = np.clip(delta, -0.5, 0.5)
    freq = (peak + offset) * spec.bin_hz

    log_freq = np.full(len(peak), np.nan)
    good = voiced & (freq > 0)
    log_freq[good] = np.log(freq[good])
    return PitchTrack(_nan_median_filter(log_freq, MEDIAN_WIDTH), good, spec.hop_s, spec.t0_s)


def change_window_frames(hop_s: float, window_s: float = DEFAULT_CHANGE_WINDOW_S) -> int:
    return max(3, int(round(window_s / hop_s)))


def detect_pitch_changes(track: PitchTrack, min_ratio: float = DEFAULT_MIN_RATIO,
                         window_frames: int | None = None) -> list[SpeedChangeEvent]:
    """Two-sided sliding median test on log pitch, then non-maximum suppression.

    A split between frames ``i-1`` and ``i`` is a candidate when the medians
    of the ``window_frames`` voiced values on either side differ by more than
    ``ln(min_ratio)``. Among overlapping candidates the split with the
    largest mean shift wins; survivors are at least one window apart.
    """
    if not min_ratio > 1:
        raise InvalidFactorError(f"min_ratio must be > 1, got {min_ratio}")
    w = change_window_frames(track.hop_s) if window_frames is None else int(window_frames)
    if w < 3:
        raise InvalidFactorError(f"window_frames must be >= 3, got {w}")
    n = len(track)
    if n < 2 * w:
        raise InsufficientLengthError(f"track has {n} frames, the test needs {2 * w}")

    lf = track.log_freq
    thresh = math.log(min_ratio)
    need = math.ceil(w / 2)
    cands = []  # (score, split, median shift, confidence)
    for i in range(w, n - w + 1):
        left, right = lf[i - w:i], lf[i:i + w]
        lv, rv = left[~np.isnan(left)], right[~np.isnan(right)]
        if len(lv) < need or len(rv) < need:
            continue
        shift = float(np.median(rv) - np.median(lv))
        if abs(shift) <= thresh:
            continue
        score = abs(float(rv.mean() - lv.mean()))
        cands.append((score, i, shift, (len(lv) + len(rv)) / (2 * w)))

    kept = []
    for score, i, shift, conf in sorted(cands, key=lambda c: (-c[0], c[1])):
        if all(abs(i - j) >= w for _, j, _, _ in kept):
            kept.append((score, i, shift, conf))
    kept.sort(key=lambda c: c[1])
    return [
        SpeedChangeEvent(track.t0_s + (i - 0.5) * track.hop_s, "up" if shift > 0 else "down",
                         abs(shift), conf)
        for _, i, shift, conf in kept
    ]


def audio_events(audio: AudioTrack, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP,
                 band=DEFAULT_BAND, min_ratio: float = DEFAULT_MIN_RATIO) -> list[SpeedChangeEvent]:
    """stft -> track_pitch -> detect_pitch_changes with the default settings."""
    spec = stft(audio, window, hop)
    hi = min(band[1], spec.bin_hz * (spec.magnitudes.shape[1] - 1))
    track = track_pitch(spec, (band[0], hi))
    if len(track) < 2 * change_window_frames(track.hop_s):
        return []
    return detect_pitch_changes(track, min_ratio)


@dataclass(frozen=True)
class LabeledWindow:
    start_s: float
    end_s: float
    start_frame: int
    end_frame: int
    label: int


def middle_third_label(event_times, start_s: float, length_s: float, margin_s: float = 0.0) -> int | None:
    """1 if an event falls in the window's middle third, 0 if not, None if too close to call.

    Events within ``margin_s`` of the 1/3 or 2/3 boundary make the window
    ambiguous.
    """
    label = 0
    for t in event_times:
        rel = t - start_s
        if rel < 0 or rel >= length_s:
            continue
        b1, b2 = length_s / 3, 2 * length_s / 3
        if abs(rel - b1) <= margin_s or abs(rel - b2) <= margin_s:
            return None
        if b1 <= rel <= b2:
            label = 1
    return label


def window_starts(duration_s: float, clip_len_s: float, stride_s: float) -> list[float]:
    starts = []
    k = 0
    while k * stride_s + clip_len_s <= duration_s + 1e-9:
        starts.append(k * stride_s)
        k += 1
    return starts


def harvest_labels(clip: Clip, clip_len_s: float = 2.0, stride_s: float | None = None,
                   events: list[SpeedChangeEvent] | None = None) -> list[LabeledWindow]:
    """Label sliding windows of ``clip`` from its own audio pitch shifts."""
    if clip.audio is None:
        raise MissingAudioError(f"clip {clip.clip_id!r} has no audio to harvest labels from")
    duration = clip.video.duration_s
    if not 0 < clip_len_s <= duration + 1e-9:
        raise InsufficientLengthError(f"window of {clip_len_s}s does not fit a {duration:.3f}s clip")
    stride_s = clip_len_s / 4 if stride_s is None else stride_s
    if events is None:
        events = audio_events(clip.audio)
    hop_s = DEFAULT_HOP / clip.audio.sample_rate
    times = [e.time_s for e in events]
    fps = clip.video.native_fps
    n_win = int(round(clip_len_s * fps))
    out = []
    for start in window_starts(duration, clip_len_s, stride_s):
        label = middle_third_label(times, start, clip_len_s, hop_s)
        if label is None:
            continue
        f0 = int(round(start * fps))
        if f0 + n_win > len(clip.video):
            continue
        out.append(LabeledWindow(start, start + clip_len_s, f0, f0 + n_win, label))
    return out
