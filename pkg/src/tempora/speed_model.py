"""Playback-speed estimator trained for equivariance to temporal resampling.

The network outputs log speed. Unlabeled clips supply pairs ``(V, V^k)``
where ``V^k`` is ``V`` accelerated k-fold; the loss asks the two
predictions to differ by exactly ``ln k``. A few clips with known speed
anchor the absolute scale (squared error in log space). At inference the
estimate is refined by repeatedly accelerating the clip toward real time
and re-estimating the remaining speed.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDataError, InsufficientLengthError, LabelError, TemporaError
from .media_core import Clip, FrameSequence, max_factor, subsample, subsample_indices
from .motion_features import FeatureConfig, FeatureVector, features_for
from .network import Batch, Network, SGDMomentum, batch_loss, loss_and_gradients

log = logging.getLogger(__name__)

K_SAMPLERS = ("truncated_normal", "log_uniform")
MAX_K_DRAWS = 50
ESTIMATOR_FEATURES = FeatureConfig(16, (1, 2, 4), ("mean_abs",))
MAX_WINDOWS = 4


class EstimatorModel(Network):
    MAGIC = b"CHSM"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 20
    learning_rate: float = 0.01
    lambda_sup: float = 1.0
    k_sampler: str = "log_uniform"
    k_max: float = 6.0
    seed: int = 0
    labeled_share: float = 0.2  # 1 labeled : 4 unlabeled terms per batch

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise TemporaError("epochs, batch_size and learning_rate must be positive")
        if self.lambda_sup < 0:
            raise TemporaError("lambda_sup must be >= 0")
        if self.k_sampler not in K_SAMPLERS:
            raise TemporaError(f"k_sampler must be one of {K_SAMPLERS}, got {self.k_sampler!r}")
        if not self.k_max >= 1:
            raise TemporaError("k_max must be >= 1")
        if not 0 <= self.labeled_share < 1:
            raise TemporaError("labeled_share must lie in [0, 1)")


@dataclass
class TrainHistory:
    batch_loss: list[float] = field(default_factory=list)
    ssl_loss: list[float] = field(default_factory=list)
    sup_loss: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    skipped_clips: int = 0
    zero_feature_batches: int = 0

    @property
    def n_batches(self) -> int:
        return len(self.batch_loss)

    @property
    def zero_feature_fraction(self) -> float:
        return self.zero_feature_batches / self.n_batches if self.n_batches else 0.0

    def smoothed(self, width: int = 50) -> np.ndarray:
        x = np.asarray(self.batch_loss)
        if len(x) < width:
            return x.copy()
        return np.convolve(x, np.ones(width) / width, mode="valid")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["batch", "loss", "ssl_loss", "sup_loss"])
            for i, row in enumerate(zip(self.batch_loss, self.ssl_loss, self.sup_loss)):
                writer.writerow([i, *(f"{v:.10g}" for v in row)])


@dataclass(frozen=True)
class PredictionStep:
    estimate_so_far: float
    residual_estimate: float
    raw_prediction: float  # exp(network output) on the clip as currently accelerated
    frames_remaining: int
    applied_factor: float  # acceleration applied after this step (1.0 = none)


@dataclass(frozen=True)
class PredictionTrace:
    steps: tuple[PredictionStep, ...]
    final_speed: float

    @property
    def iterations_used(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        return {"steps": [asdict(s) for s in self.steps], "final_speed": self.final_speed,
                "iterations_used": self.iterations_used}


# -- features ---------------------------------------------------------------


def clip_features(video: FrameSequence, cfg: FeatureConfig = ESTIMATOR_FEATURES,
                  max_windows: int = MAX_WINDOWS) -> FeatureVector:
    """Estimator input: features of consecutive ``F``-frame windows, averaged.

    Windows are non-overlapping and spread evenly over the clip; the model
    sees motion at the clip's own frame spacing.
    """
    F = cfg.n_frames
    if len(video) < F:
        raise InsufficientLengthError(f"clip has {len(video)} frames, estimator needs {F}")
    n_win = max(1, min(max_windows, len(video) // F))
    starts = np.floor(np.linspace(0, len(video) - F, n_win) + 0.5).astype(int)
    vals = np.mean([features_for(video.crop(s, s + F), cfg).values for s in starts], axis=0)
    return FeatureVector(vals, cfg.config_hash)


# -- losses -------------------------------------------------------------------


def ssl_loss(model: Network, clip_features: FeatureVector, accel_features: FeatureVector, k: float) -> float:
    """``[f(V^k) - (ln k + f(V))]^2`` with f in log-speed units."""
    if not k >= 1:
        raise TemporaError(f"acceleration factor must be >= 1, got {k}")
    return (model.forward(accel_features) - (math.log(k) + model.forward(clip_features))) ** 2


def sup_loss(model: Network, features: FeatureVector, true_speed: float) -> float:
    if not true_speed > 0:
        raise LabelError(f"true speed must be > 0, got {true_speed}")
    return (model.forward(features) - math.log(true_speed)) ** 2


# -- training -----------------------------------------------------------------


def sample_k(rng: np.random.Generator, config: TrainConfig, k_feasible: float, duration_s: float) -> float | None:
    """Draw an acceleration factor, or None when every draw was infeasible."""
    if k_feasible < 1:
        return None
    for _ in range(MAX_K_DRAWS):
        if config.k_sampler == "truncated_normal":
            k = rng.normal(1.0, duration_s / 2.0)
        else:
            k = math.exp(rng.uniform(0.0, math.log(config.k_max)))
        if 1.0 <= k <= k_feasible:
            return float(k)
    return None


def _accelerate(video: FrameSequence, k: float, offset: int) -> FrameSequence:
    return subsample(video.crop(offset, len(video)), k)


def train(unlabeled: Sequence[Clip], labeled: Sequence[Clip] = (), config: TrainConfig = TrainConfig(),
          feature_config: FeatureConfig = ESTIMATOR_FEATURES, hidden: tuple[int, ...] = (64, 64),
          progress: Callable[[int, float], None] | None = None) -> tuple[EstimatorModel, TrainHistory]:
    """Fit an estimator with the equivariance loss plus log-space calibration.

    Every epoch visits each unlabeled clip once as an equivariance pair;
    labeled clips are cycled to fill ``labeled_share`` of each batch.
    Deterministic for a given ``config.seed``.
    """
    if not unlabeled:
        raise DegenerateDataError("training needs at least one unlabeled clip")
    if config.lambda_sup > 0 and not labeled:
        raise DegenerateDataError("lambda_sup > 0 needs at least one labeled clip")
    for c in labeled:
        if c.true_speed is None or not c.true_speed > 0:
            raise LabelError(f"labeled clip {c.clip_id!r} has no positive ground-truth speed")

    F = feature_config.n_frames
    rng = np.random.default_rng(config.seed)
    base = [clip_features(c.video, feature_config).values for c in unlabeled]
    lab_feats = [clip_features(c.video, feature_config).values for c in labeled]
    lab_logs = np.log([c.true_speed for c in labeled]) if labeled else np.zeros(0)

    model = EstimatorModel.initialize(feature_config, hidden, seed=config.seed, metadata={
        "train_config": asdict(config),
        "k_policy": "k >= 1 enforced and capped by the frame budget "
                    "(truncated_normal rejects draws outside [1, k_feasible])",
        "output": "log playback speed",
    })
    model.fit_normalization(np.stack(base + lab_feats))
    opt = SGDMomentum(model.parameters(), config.learning_rate, 0.9)

    use_sup = config.lambda_sup > 0 and len(labeled) > 0
    n_sup = max(1, int(round(config.batch_size * config.labeled_share))) if use_sup else 0
    n_ssl = max(1, config.batch_size - n_sup)
    history = TrainHistory()
    lab_order = np.zeros(0, dtype=int)
    lab_pos = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(unlabeled))
        epoch_losses = []
        for start in range(0, len(order), n_ssl):
            orig, accel, log_k = [], [], []
            for i in order[start:start + n_ssl]:
                video = unlabeled[i].video
                k_feasible = max_factor(len(video), F)
                k = sample_k(rng, config, k_feasible, video.duration_s)
                if k is None:
                    history.skipped_clips += 1
                    continue
                # random phase so V^k does not always start on frame 0
                max_off = len(video) - (F - 1) * k - 1
                offset = int(rng.integers(0, int(min(math.floor(k), max_off)) + 1)) if max_off >= 1 else 0
                sub = _accelerate(video, k, offset)
                idx = subsample_indices(len(video) - offset, k)
                k_eff = idx[-1] / (len(idx) - 1)
                orig.append(base[i])
                accel.append(clip_features(sub, feature_config).values)
                log_k.append(math.log(k_eff))
            batch = Batch(lambda_sup=config.lambda_sup)
            if orig:
                batch.ssl_orig, batch.ssl_accel = np.stack(orig), np.stack(accel)
                batch.ssl_log_k = np.array(log_k)
            if n_sup:
                sup_idx = []
                for _ in range(n_sup):
                    if lab_pos >= len(lab_order):
                        lab_order, lab_pos = rng.permutation(len(labeled)), 0
                    sup_idx.append(lab_order[lab_pos])
                    lab_pos += 1
                batch.sup_x = np.stack([lab_feats[j] for j in sup_idx])
                batch.sup_log_speed = lab_logs[sup_idx]
            if not batch.n_ssl() and not batch.n_sup():
                continue
            parts = [p for p in (batch.ssl_orig, batch.ssl_accel, batch.sup_x) if p is not None]
            if all(not np.any(p) for p in parts):
                history.zero_feature_batches += 1
            ssl_part = batch_loss(model, Batch(batch.ssl_orig, batch.ssl_accel, batch.ssl_log_k))
            sup_part = batch_loss(model, Batch(sup_x=batch.sup_x, sup_log_speed=batch.sup_log_speed))
            loss, grads = loss_and_gradients(model, batch)
            opt.step(grads)
            history.batch_loss.append(loss)
            history.ssl_loss.append(ssl_part)
            history.sup_loss.append(sup_part)
            epoch_losses.append(loss)
        history.epoch_loss.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        if progress is not None:
            progress(epoch, history.epoch_loss[-1])
    if history.skipped_clips:
        log.warning("skipped %d clip draws that were too short for any acceleration", history.skipped_clips)
    return model, history


# -- inference ----------------------------------------------------------------


def unroll(estimate: Callable, accelerate: Callable, feasible: Callable, state, iterations: int) -> PredictionTrace:
    """Iterative refinement over an abstract clip ``state``.

    ``estimate(state)`` returns the speed of the state as seen by the
    estimator, ``feasible(state)`` the largest allowed acceleration and
    ``accelerate(state, k)`` returns ``(new_state, effective_k)``. The speed
    of the original clip is the latest raw estimate divided by the total
    acceleration applied so far; each step's residual is the ratio of
    consecutive estimates, so the estimates are running products of the
    residuals.
    """
    if iterations < 1:
        raise TemporaError(f"iterations must be >= 1, got {iterations}")
    steps = []
    total_k = 1.0
    previous = 1.0
    for j in range(iterations):
        raw = float(estimate(state))
        current = raw / total_k
        k_room = feasible(state)
        k = min(1.0 / raw, k_room) if raw < 1.0 else 1.0
        last = j == iterations - 1 or k <= 1.0 + 1e-12
        applied = 1.0
        if not last:
            state, applied = accelerate(state, k)
            total_k *= applied
        frames = len(state) if hasattr(state, "__len__") else 0
        steps.append(PredictionStep(current, current / previous, raw, frames, applied))
        previous = current
        if last:
            break
    return PredictionTrace(tuple(steps), steps[-1].estimate_so_far)


def predict_log_speed(model: Network, video: FrameSequence) -> float:
    return model.forward(clip_features(video, model.feature_config))


def predict_iterative(model: Network, clip, iterations: int = 3, F: int | None = None) -> PredictionTrace:
    """Estimate playback speed with ``iterations`` rounds of accelerate-and-re-estimate.

    After each round the clip currently held is accelerated by the inverse
    of the raw estimate, capped so that at least ``F`` frames remain; the
    loop stops early once the clip looks real-time or cannot be accelerated.
    """
    video = clip.video if isinstance(clip, Clip) else clip
    F = model.feature_config.n_frames if F is None else F
    if len(video) < F:
        raise InsufficientLengthError(f"clip has {len(video)} frames, estimator needs {F}")

    def accelerate(v: FrameSequence, k: float):
        idx = subsample_indices(len(v), k)
        return v.take(idx), idx[-1] / (len(idx) - 1)

    return unroll(lambda v: math.exp(predict_log_speed(model, v)), accelerate,
                  lambda v: max_factor(len(v), F), video, iterations)
