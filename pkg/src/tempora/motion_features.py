"""Frame-difference motion statistics and the flow-style baseline detector.

Mean absolute frame difference stands in for optical-flow magnitude: it is
cheap, needs no pretrained network, and preserves the ordering the
baseline relies on (more motion per frame, larger difference).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientLengthError, TemporaError
from .media_core import FrameSequence

STATS = ("mean_abs", "p95_abs", "changed_frac")
ALLOWED_STRIDES = (1, 2, 4)
# a pixel counts as changed once it moves by at least one 8-bit level
CHANGE_THRESHOLD = 0.5 / 255.0
MAGNITUDE_FLOOR = 1e-6
SMOOTH_WINDOW = 5


@dataclass(frozen=True)
class MotionProfile:
    magnitudes: np.ndarray

    def __len__(self):
        return len(self.magnitudes)


@dataclass(frozen=True)
class FeatureConfig:
    n_frames: int = 16
    strides: tuple[int, ...] = (1, 2, 4)
    stats: tuple[str, ...] = ("mean_abs",)

    def __post_init__(self):
        strides = tuple(sorted(set(int(s) for s in self.strides)))
        stats = tuple(s for s in STATS if s in set(self.stats))
        if not strides or not set(strides) <= set(ALLOWED_STRIDES):
            raise TemporaError(f"strides must be a non-empty subset of {ALLOWED_STRIDES}, got {self.strides}")
        if not stats or len(stats) != len(set(self.stats)):
            raise TemporaError(f"stats must be a non-empty subset of {STATS}, got {self.stats}")
        if self.n_frames <= max(strides):
            raise TemporaError(f"n_frames={self.n_frames} leaves no pair at stride {max(strides)}")
        object.__setattr__(self, "strides", strides)
        object.__setattr__(self, "stats", stats)

    @property
    def length(self) -> int:
        return sum(self.n_frames - d for d in self.strides) * len(self.stats)

    @property
    def config_hash(self) -> str:
        key = f"F={self.n_frames};strides={','.join(map(str, self.strides))};stats={','.join(self.stats)}"
        return hashlib.sha1(key.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    config_hash: str

    def __len__(self):
        return len(self.values)


def motion_profile(video: FrameSequence) -> MotionProfile:
    """Entry ``i`` is the mean over pixels of ``|frame[i+1] - frame[i]|``."""
    if len(video) < 2:
        raise InsufficientLengthError("motion_profile needs at least 2 frames")
    f = video.frames
    diffs = np.abs(f[1:] - f[:-1]).reshape(len(video) - 1, -1)
    return MotionProfile(diffs.mean(axis=1))


def uniform_indices(n_available: int, n_frames: int) -> np.ndarray:
    """``n_frames`` indices spread evenly from first to last frame."""
    if n_available < n_frames:
        raise InsufficientLengthError(f"need {n_frames} frames, clip has {n_available}")
    return np.floor(np.linspace(0, n_available - 1, n_frames) + 0.5).astype(np.int64)


def _pair_stats(diff: np.ndarray, stats: Sequence[str]) -> np.ndarray:
    """Statistics of ``|diff|`` per pair; ``diff`` has shape (pairs, pixels)."""
    a = np.abs(diff)
    cols = []
    for name in stats:
        if name == "mean_abs":
            cols.append(a.mean(axis=1))
        elif name == "p95_abs":
            cols.append(np.percentile(a, 95, axis=1))
        else:
            cols.append((a > CHANGE_THRESHOLD).mean(axis=1))
    return np.stack(cols, axis=1)


def extract_features(video: FrameSequence, F: int = 16, strides: Iterable[int] = (1, 2, 4),
                     stats: Iterable[str] = ("mean_abs",)) -> FeatureVector:
    """Log-compressed difference statistics over ``F`` uniformly selected frames.

    For every stride ``d`` and pair ``(i, i+d)`` of the selected frames the
    requested statistics of ``|frame[i+d] - frame[i]|`` are taken, mapped
    through ``log1p`` and concatenated in (stride, pair, stat) order.
    """
    cfg = FeatureConfig(F, tuple(strides), tuple(stats))
    return features_for(video, cfg)


def features_for(video: FrameSequence, cfg: FeatureConfig) -> FeatureVector:
    sel = video.frames[uniform_indices(len(video), cfg.n_frames)]
    flat = sel.reshape(cfg.n_frames, -1)
    parts = [_pair_stats(flat[d:] - flat[:-d], cfg.stats).reshape(-1) for d in cfg.strides]
    return FeatureVector(np.log1p(np.concatenate(parts)), cfg.config_hash)


def smooth(values: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centered moving average; the window is truncated at the edges."""
    values = np.asarray(values, dtype=np.float64)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(len(values))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(values))
    return (csum[hi] - csum[lo]) / (hi - lo)


def middle_third_slice(n_frames: int) -> slice:
    """Profile entries whose transition time lies in the middle third of the clip."""
    span = n_frames - 1
    lo = math.ceil(span / 3 - 0.5)
    hi = math.floor(2 * span / 3 - 0.5) + 1
    return slice(lo, hi)


def flow_baseline_ratio(video: FrameSequence) -> float:
    """max/min of the smoothed motion profile inside the clip's middle third."""
    if len(video) < 7:
        raise InsufficientLengthError(f"flow baseline needs >= 7 frames, got {len(video)}")
    smoothed = smooth(motion_profile(video).magnitudes)
    mid = np.maximum(smoothed[middle_third_slice(len(video))], MAGNITUDE_FLOOR)
    return float(mid.max() / mid.min())


def flow_baseline_detect(video: FrameSequence, threshold: float) -> bool:
    return flow_baseline_ratio(video) > threshold


def calibrate_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Threshold maximizing accuracy of ``score > threshold`` on a held-out split.

    Candidates are midpoints between consecutive distinct scores; ties go to
    the smallest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise TemporaError("cannot calibrate a threshold on an empty set")
    uniq = np.unique(scores)
    candidates = np.concatenate([[uniq[0] - 1.0], (uniq[1:] + uniq[:-1]) / 2, [uniq[-1] + 1.0]])
    acc = [np.mean((scores > t) == labels) for t in candidates]
    return float(candidates[int(np.argmax(acc))])
