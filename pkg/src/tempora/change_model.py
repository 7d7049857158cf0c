"""Visual speed-change detector.

A small classifier over motion features that predicts whether a window of
video contains a playback-speed change in its middle third. It is trained
on labels harvested from audio pitch shifts but looks only at frames at
inference time.
"""
from __future__ import annotations

import logging
from dataclasses import asdict
from typing import Sequence

import numpy as np

from .audio_analysis import middle_third_label, window_starts
from .errors import DegenerateDataError, EmptySetError, InsufficientLengthError, LabelError
from .media_core import Clip, FrameSequence, SpeedProfile
from .metrics_eval import DetectionReport, detection_scores
from .motion_features import (MAGNITUDE_FLOOR, FeatureConfig, FeatureVector, features_for,
                              motion_profile)
from .network import Batch, Network, SGDMomentum, loss_and_gradients, sigmoid
from .speed_model import TrainConfig

log = logging.getLogger(__name__)

DETECTOR_FEATURES = FeatureConfig(16, (1, 2, 4), ("mean_abs",))
N_CONTRAST = 3
THRESHOLD = 0.5
DEFAULT_WINDOW_S = 2.0
DETECTOR_TRAIN_CONFIG = TrainConfig(epochs=60, batch_size=32, learning_rate=0.01)


class DetectorModel(Network):
    MAGIC = b"CHDM"


def contrast_features(video: FrameSequence) -> np.ndarray:
    """Log ratios of mean motion between thirds: last/first, middle/first, last/middle."""
    if len(video) < 4:
        raise InsufficientLengthError(f"contrast features need >= 4 frames, got {len(video)}")
    thirds = np.array_split(motion_profile(video).magnitudes, 3)
    first, middle, last = (max(float(t.mean()), MAGNITUDE_FLOOR) for t in thirds)
    return np.log([last / first, middle / first, last / middle])


def detector_features(video: FrameSequence, F: int = 16, cfg: FeatureConfig | None = None) -> FeatureVector:
    """Base motion features of ``F`` uniformly selected frames plus three contrast ratios."""
    cfg = FeatureConfig(F, DETECTOR_FEATURES.strides, DETECTOR_FEATURES.stats) if cfg is None else cfg
    base = features_for(video, cfg)
    return FeatureVector(np.concatenate([base.values, contrast_features(video)]), cfg.config_hash)


def train_detector(windows: Sequence[tuple[FeatureVector, int]], config: TrainConfig = DETECTOR_TRAIN_CONFIG,
                   feature_config: FeatureConfig = DETECTOR_FEATURES, hidden: tuple[int, ...] = (32, 32),
                   balance: bool = True) -> tuple[DetectorModel, list[float]]:
    """Fit the detector with mean binary cross-entropy and SGD with momentum.

    With ``balance`` the minority class is oversampled so every epoch sees
    both classes equally often. Returns the model and the per-batch losses.
    """
    if not windows:
        raise EmptySetError("no training windows")
    x = np.stack([np.asarray(fv.values if isinstance(fv, FeatureVector) else fv, dtype=np.float64)
                  for fv, _ in windows])
    y = np.array([int(lbl) for _, lbl in windows])
    if not set(np.unique(y)) <= {0, 1}:
        raise LabelError("detector labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("detector training needs both positive and negative windows")

    rng = np.random.default_rng(config.seed)
    model = DetectorModel.initialize(feature_config, hidden, seed=config.seed, n_extra=N_CONTRAST,
                                     metadata={"train_config": asdict(config), "output": "logit",
                                               "threshold": THRESHOLD, "balanced": balance})
    model.fit_normalization(x)
    opt = SGDMomentum(model.parameters(), config.learning_rate, 0.9)

    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    losses = []
    for _ in range(config.epochs):
        if balance:
            n = max(len(pos), len(neg))
            idx = np.concatenate([rng.choice(pos, n, replace=len(pos) < n),
                                  rng.choice(neg, n, replace=len(neg) < n)])
            order = rng.permutation(idx)
        else:
            order = rng.permutation(len(y))
        for start in range(0, len(order), config.batch_size):
            b = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(model, Batch(bce_x=x[b], bce_y=y[b]))
            opt.step(grads)
            losses.append(loss)
    return model, losses


def bce(logit: float, label: int) -> float:
    """Per-sample binary cross-entropy of a logit."""
    return float(np.logaddexp(0.0, logit) - label * logit)


def detect(model: Network, video: FrameSequence) -> tuple[float, bool]:
    """(probability of a change in the middle third, probability >= 0.5)."""
    if not isinstance(video, FrameSequence):
        raise TypeError(f"detect takes a FrameSequence, not {type(video).__name__}")
    feats = detector_features(video, cfg=model.feature_config)
    p = float(sigmoid(model.forward(feats)))
    return p, p >= THRESHOLD


def protocol_windows(profile: SpeedProfile, n_frames: int, fps: float, clip_len_s: float,
                     stride_s: float | None = None) -> list[tuple[int, int, int]]:
    """(start_frame, end_frame, label) for every full window, labeled from the true change times."""
    stride_s = clip_len_s / 2 if stride_s is None else stride_s
    n_win = int(round(clip_len_s * fps))
    out = []
    for start in window_starts(n_frames / fps, clip_len_s, stride_s):
        f0 = int(round(start * fps))
        if f0 + n_win > n_frames:
            continue
        out.append((f0, f0 + n_win, middle_third_label(profile.change_times, start, clip_len_s)))
    return out


def evaluate_protocol(model, items: Sequence[tuple[Clip | FrameSequence, SpeedProfile]],
                      clip_len_s: float = DEFAULT_WINDOW_S, stride_s: float | None = None) -> DetectionReport:
    """Window-level accuracy with labels taken from ground truth, never from audio.

    ``model`` is a detector or any callable ``video -> bool``.
    """
    preds, truth = [], []
    for clip, profile in items:
        video = clip.video if isinstance(clip, Clip) else clip
        for f0, f1, label in protocol_windows(profile, len(video), video.native_fps, clip_len_s, stride_s):
            window = video.crop(f0, f1)
            positive = detect(model, window)[1] if isinstance(model, Network) else bool(model(window))
            preds.append(int(positive))
            truth.append(label)
    if not truth:
        raise EmptySetError("no evaluation windows")
    return detection_scores(preds, truth)


def harvested_windows(clips: Sequence[Clip], clip_len_s: float = DEFAULT_WINDOW_S,
                      stride_s: float | None = None, F: int = 16) -> list[tuple[FeatureVector, int]]:
    """Detector training pairs from audio-harvested labels."""
    from .audio_analysis import harvest_labels

    cfg = FeatureConfig(F, DETECTOR_FEATURES.strides, DETECTOR_FEATURES.stats)
    out = []
    for clip in clips:
        for w in harvest_labels(clip, clip_len_s, stride_s):
            out.append((detector_features(clip.video.crop(w.start_frame, w.end_frame), cfg=cfg), w.label))
    return out

