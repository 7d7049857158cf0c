"""Core media types and the pure temporal operations on them.

Pixel data lives in float64 arrays normalized to [0, 1]; quantization to
8-bit only happens in :mod:`tempora.media_io`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.signal import resample_poly

from .errors import InsufficientLengthError, InvalidFactorError, ProfileError, TemporaError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """A stack of frames, shape ``(N, H, W)`` or ``(N, H, W, 3)``."""

    frames: np.ndarray
    native_fps: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim not in (3, 4) or (frames.ndim == 4 and frames.shape[3] not in (1, 3)):
            raise TemporaError(f"frames must be (N,H,W) or (N,H,W,3), got shape {frames.shape}")
        if frames.ndim == 4 and frames.shape[3] == 1:
            frames = frames[..., 0]
        if frames.shape[0] < 1:
            raise InsufficientLengthError("a FrameSequence needs at least one frame")
        if not self.native_fps > 0:
            raise TemporaError(f"native_fps must be > 0, got {self.native_fps}")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0 or not np.isfinite(frames).all()):
            raise TemporaError("pixel values must lie in [0, 1]")
        if not frames.flags.c_contiguous or frames is self.frames:
            frames = np.array(frames, copy=True, order="C")
        object.__setattr__(self, "frames", _frozen(frames))
        object.__setattr__(self, "native_fps", float(self.native_fps))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return self.native_fps == other.native_fps and np.array_equal(self.frames, other.frames)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def channels(self) -> int:
        return 1 if self.frames.ndim == 3 else 3

    @property
    def duration_s(self) -> float:
        return len(self) / self.native_fps

    def crop(self, start: int, stop: int) -> "FrameSequence":
        """Frames ``[start, stop)`` at the same fps."""
        if not 0 <= start < stop <= len(self):
            raise InsufficientLengthError(f"crop [{start}, {stop}) outside 0..{len(self)}")
        return FrameSequence(self.frames[start:stop], self.native_fps)

    def take(self, indices: Sequence[int]) -> "FrameSequence":
        return FrameSequence(self.frames[np.asarray(indices, dtype=np.int64)], self.native_fps)


@dataclass(frozen=True, eq=False)
class AudioTrack:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not self.sample_rate > 0:
            raise TemporaError(f"sample_rate must be > 0, got {self.sample_rate}")
        if samples.size and (not np.isfinite(samples).all() or np.abs(samples).max() > 1.0):
            raise TemporaError("audio samples must be finite and within [-1, 1]")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AudioTrack):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class Clip:
    video: FrameSequence
    audio: AudioTrack | None = None
    true_speed: float | None = None
    clip_id: str = ""

    def __post_init__(self):
        if self.true_speed is not None and not self.true_speed > 0:
            raise TemporaError(f"true_speed must be > 0, got {self.true_speed}")
        if self.audio is not None:
            slack = 1.0 / self.video.native_fps + 1e-9
            if abs(self.audio.duration_s - self.video.duration_s) > slack:
                raise TemporaError(
                    f"audio lasts {self.audio.duration_s:.4f}s but video lasts {self.video.duration_s:.4f}s"
                )


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-constant playback speed over wall-clock time."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(s)) for a, b, s in self.segments)
        if not segs:
            raise ProfileError("a profile needs at least one segment")
        if segs[0][0] != 0.0:
            raise ProfileError(f"first segment must start at 0, starts at {segs[0][0]}")
        for i, (a, b, s) in enumerate(segs):
            if not b > a:
                raise ProfileError(f"segment {i} is empty or reversed: [{a}, {b}]")
            if not s > 0:
                raise ProfileError(f"segment {i} has non-positive speed {s}")
            if i and segs[i - 1][1] != a:
                kind = "gap" if a > segs[i - 1][1] else "overlap"
                raise ProfileError(f"{kind} between segments {i - 1} and {i}")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, speed: float, duration_s: float) -> "SpeedProfile":
        return cls(((0.0, duration_s, speed),))

    @classmethod
    def steps(cls, speeds: Sequence[float], change_times: Sequence[float], duration_s: float) -> "SpeedProfile":
        bounds = [0.0, *change_times, duration_s]
        return cls(tuple((bounds[i], bounds[i + 1], speeds[i]) for i in range(len(speeds))))

    @property
    def duration_s(self) -> float:
        return self.segments[-1][1]

    @property
    def change_times(self) -> list[float]:
        return [seg[0] for seg in self.segments[1:]]

    @property
    def speeds(self) -> list[float]:
        return [seg[2] for seg in self.segments]

    def speed_at(self, t):
        t = np.asarray(t, dtype=np.float64)
        starts = np.array([seg[0] for seg in self.segments])
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.segments) - 1)
        return np.array(self.speeds)[idx]

    def content_time(self, t):
        """Integral of speed from 0 to ``t``: how much real-world time has elapsed on screen."""
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for a, b, s in self.segments:
            out += s * np.clip(t - a, 0.0, b - a)
        last_a, last_b, last_s = self.segments[-1]
        out += last_s * np.clip(t - last_b, 0.0, None)
        return out

    def to_json(self) -> list[dict]:
        return [{"t_start": a, "t_end": b, "speed": s} for a, b, s in self.segments]

    @classmethod
    def from_json(cls, segments: list[dict]) -> "SpeedProfile":
        return cls(tuple((d["t_start"], d["t_end"], d["speed"]) for d in segments))


def subsample_indices(n_frames: int, k: float) -> np.ndarray:
    """Source indices ``round(i*k)`` (half up) for ``i = 0 .. floor((n-1)/k)``."""
    if not k >= 1:
        raise InvalidFactorError(f"acceleration factor must be >= 1, got {k}")
    count = math.floor((n_frames - 1) / k + 1e-9) + 1
    idx = np.floor(np.arange(count) * k + 0.5).astype(np.int64)
    return idx[idx < n_frames]


def max_factor(n_frames: int, min_frames: int) -> float:
    """Largest k for which subsampling keeps at least ``min_frames`` frames."""
    if n_frames < min_frames:
        return 0.0
    if min_frames < 2:
        return math.inf
    return (n_frames - 1) / (min_frames - 1)


def subsample(video: FrameSequence, k: float) -> FrameSequence:
    """Accelerate ``video`` k-fold by nearest-index frame selection."""
    idx = subsample_indices(len(video), k)
    if len(idx) < 2:
        raise InsufficientLengthError(f"subsampling {len(video)} frames by {k} leaves {len(idx)} frame(s)")
    return video.take(idx)


def blur_centers(n_frames: int, window: int, stride: int) -> list[int]:
    """Centers of valid blur windows.

    Centers sit at the forward-leaning middle of consecutive stride blocks
    (``j*stride + stride//2``); windows that would leave the clip are dropped.
    """
    before = (window - 1) // 2
    after = window // 2
    return [c for c in range(stride // 2, n_frames, stride) if c - before >= 0 and c + after < n_frames]


def synthesize_blur(video: FrameSequence, window: int = 8, stride: int = 8) -> FrameSequence:
    """Emulate long-exposure, low-fps capture.

    Output frame ``j`` is the per-pixel mean of input frames
    ``[c - (window-1)//2, c + window//2]`` with ``c`` from :func:`blur_centers`,
    so even windows lean one frame forward (``[c-3, c+4]`` for 8).
    """
    if window < 1 or stride < 1:
        raise InvalidFactorError(f"window and stride must be >= 1, got {window}, {stride}")
    if window > len(video):
        raise InsufficientLengthError(f"blur window {window} exceeds clip length {len(video)}")
    centers = blur_centers(len(video), window, stride)
    if not centers:
        raise InsufficientLengthError(f"no complete blur window of {window} fits {len(video)} frames")
    before = (window - 1) // 2
    out = []
    for c in centers:
        span = video.frames[c - before:c - before + window]
        ref = span[0]
        # offsets from a reference frame keep identical frames exact under summation
        mean = ref + (span - ref).mean(axis=0)
        out.append(np.clip(mean, span.min(axis=0), span.max(axis=0)))
    return FrameSequence(np.stack(out), video.native_fps)


@dataclass(frozen=True)
class BlurPair:
    """Blurred low-fps input aligned with its sharp high-fps target.

    ``inputs`` frame ``j`` corresponds to ``target`` frame ``j * stride``.
    """

    inputs: FrameSequence
    target: FrameSequence
    stride: int
    centers: list[int] = field(default_factory=list)


def make_blur_pair(video: FrameSequence, window: int = 8, stride: int = 8) -> BlurPair:
    blurred = synthesize_blur(video, window, stride)
    centers = blur_centers(len(video), window, stride)
    target = video.crop(centers[0], centers[-1] + 1)
    low = FrameSequence(blurred.frames, video.native_fps / stride)
    return BlurPair(low, target, stride, centers)


def resample_audio(audio: AudioTrack, rate: float) -> AudioTrack:
    """Play ``audio`` ``rate`` times faster at the same sample rate (all frequencies scale by ``rate``)."""
    if not rate > 0:
        raise InvalidFactorError(f"resampling rate must be > 0, got {rate}")
    frac = Fraction(rate).limit_denominator(1000)
    out = resample_poly(audio.samples, frac.denominator, frac.numerator)
    return AudioTrack(np.clip(out, -1.0, 1.0), audio.sample_rate)


def crop_audio(audio: AudioTrack, t0: float, t1: float) -> AudioTrack:
    a = int(round(t0 * audio.sample_rate))
    b = int(round(t1 * audio.sample_rate))
    return AudioTrack(audio.samples[a:b], audio.sample_rate)
