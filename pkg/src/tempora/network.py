"""Small tanh MLP with hand-written reverse-mode gradients.

Shared by the speed estimator (scalar output = log playback speed) and the
change detector (scalar output = logit). Inputs go through a fixed
preprocessing step before the first layer: the leading ``n_log`` entries
(log1p-compressed motion statistics) are mapped back to log magnitude, then
every input is standardized with stored shift/scale vectors.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .motion_features import STATS, FeatureConfig, FeatureVector

LOG_FLOOR = 1e-6
FORMAT_VERSION = 1


def log_magnitude(values: np.ndarray) -> np.ndarray:
    """Undo log1p and take a floored log: ``ln(expm1(v) + 1e-6)``."""
    if np.any(values < 0):
        raise DomainError("log1p-compressed motion features must be >= 0")
    return np.log(np.expm1(values) + LOG_FLOOR)


@dataclass
class Network:
    feature_config: FeatureConfig
    weights: list[np.ndarray]  # layer l: (out, in)
    biases: list[np.ndarray]
    input_shift: np.ndarray
    input_scale: np.ndarray
    n_log: int
    n_extra: int = 0
    version: int = FORMAT_VERSION
    metadata: dict = field(default_factory=dict)

    MAGIC: ClassVar[bytes] = b"CHNN"

    def __post_init__(self):
        sizes = self.layer_sizes
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: weights {w.shape} and biases {b.shape} do not match")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l} expects {w.shape[1]} inputs, previous layer gives "
                                 f"{self.weights[l - 1].shape[0]}")
        if sizes[-1] != 1:
            raise ShapeError(f"final layer must have one output, has {sizes[-1]}")
        if self.input_shift.shape != (sizes[0],) or self.input_scale.shape != (sizes[0],):
            raise ShapeError("input normalization vectors must match the input size")
        if sizes[0] != self.feature_config.length + self.n_extra:
            raise ShapeError(f"input size {sizes[0]} does not match the feature config "
                             f"({self.feature_config.length} + {self.n_extra} extra)")
        params = [*self.weights, *self.biases, self.input_shift, self.input_scale]
        if not all(np.isfinite(p).all() for p in params):
            raise ShapeError("model parameters must be finite")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def initialize(cls, feature_config: FeatureConfig, hidden: tuple[int, ...] = (64, 64), seed: int = 0,
                   n_extra: int = 0, n_log: int | None = None, metadata: dict | None = None,
                   zero: bool = False):
        n_in = feature_config.length + n_extra
        sizes = [n_in, *hidden, 1]
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = np.zeros((fan_out, fan_in)) if zero else rng.uniform(-limit, limit, size=(fan_out, fan_in))
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(feature_config, weights, biases, np.zeros(n_in), np.ones(n_in),
                   feature_config.length if n_log is None else n_log, n_extra, FORMAT_VERSION,
                   dict(metadata or {}))

    def copy(self):
        return type(self)(self.feature_config, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.input_shift.copy(),
                          self.input_scale.copy(), self.n_log, self.n_extra, self.version,
                          json.loads(json.dumps(self.metadata)))

    # -- evaluation -----------------------------------------------------

    def prepare(self, features) -> np.ndarray:
        """Raw feature rows -> standardized network inputs, shape (n, n_inputs)."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.n_inputs:
            raise ShapeError(f"model takes {self.n_inputs} features, got {x.shape[1]}")
        x = x.copy()
        x[:, :self.n_log] = log_magnitude(x[:, :self.n_log])
        return (x - self.input_shift) / self.input_scale

    def fit_normalization(self, features) -> None:
        """Set input shift/scale to the mean/std of raw training features."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64)).copy()
        x[:, :self.n_log] = log_magnitude(x[:, :self.n_log])
        std = x.std(axis=0)
        self.input_shift = x.mean(axis=0)
        self.input_scale = np.where(std > 1e-8, std, 1.0)

    def _forward(self, z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [z]
        h = z
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T + b
            h = a if l == last else np.tanh(a)
            acts.append(h)
        return h[:, 0], acts

    def _backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        g = grad_out[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            gw[l] = g.T @ acts[l]
            gb[l] = g.sum(axis=0)
            if l:
                g = (g @ self.weights[l]) * (1.0 - acts[l] ** 2)
        return gw, gb

    def forward_prepared(self, z: np.ndarray) -> np.ndarray:
        return self._forward(z)[0]

    def forward_many(self, features) -> np.ndarray:
        return self.forward_prepared(self.prepare(features))

    def forward(self, features) -> float:
        """Scalar output for one feature vector."""
        values = features.values if isinstance(features, FeatureVector) else features
        if isinstance(features, FeatureVector) and features.config_hash != self.feature_config.config_hash:
            raise ShapeError("feature vector was produced by a different feature configuration")
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ShapeError(f"expected one feature vector, got shape {values.shape}")
        return float(self.forward_many(values[None])[0])

    # -- parameter plumbing for the optimizer ------------------------------

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    # -- serialization --------------------------------------------------

    def to_bytes(self) -> bytes:
        cfg = self.feature_config
        meta = json.dumps(self.metadata, sort_keys=True).encode()
        parts = [self.MAGIC, struct.pack("<H", self.version),
                 struct.pack("<HB", cfg.n_frames, len(cfg.strides)), bytes(cfg.strides),
                 struct.pack("<B", len(cfg.stats)), bytes(STATS.index(s) for s in cfg.stats),
                 struct.pack("<BII", self.n_extra, self.n_log, self.n_inputs),
                 self.input_shift.astype("<f8").tobytes(), self.input_scale.astype("<f8").tobytes(),
                 struct.pack("<I", len(meta)), meta,
                 struct.pack("<H", len(self.weights))]
        for w, b in zip(self.weights, self.biases):
            parts.append(struct.pack("<II", *w.shape))
            parts.append(np.ascontiguousarray(w).astype("<f8").tobytes())
            parts.append(b.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes):
        reader = _Reader(data)
        magic = reader.take(4, "magic")
        if magic != cls.MAGIC:
            raise FormatError(f"expected magic {cls.MAGIC!r}, found {magic!r}", "magic")
        (version,) = reader.unpack("<H", "version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}", "version")
        n_frames, n_strides = reader.unpack("<HB", "feature_config")
        strides = tuple(reader.take(n_strides, "strides"))
        (n_stats,) = reader.unpack("<B", "feature_config")
        codes = reader.take(n_stats, "stats")
        if any(c >= len(STATS) for c in codes):
            raise FormatError(f"unknown statistic code in {list(codes)}", "stats")
        n_extra, n_log, n_inputs = reader.unpack("<BII", "feature_config")
        shift = reader.array(n_inputs, "input_shift")
        scale = reader.array(n_inputs, "input_scale")
        (meta_len,) = reader.unpack("<I", "metadata")
        try:
            metadata = json.loads(reader.take(meta_len, "metadata").decode() or "{}")
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(str(exc), "metadata") from None
        (n_layers,) = reader.unpack("<H", "layer_count")
        weights, biases = [], []
        for l in range(n_layers):
            rows, cols = reader.unpack("<II", f"layer{l}.shape")
            weights.append(reader.array(rows * cols, f"layer{l}.weights").reshape(rows, cols))
            biases.append(reader.array(rows, f"layer{l}.biases"))
        if reader.pos != len(data):
            raise FormatError(f"{len(data) - reader.pos} trailing bytes", "payload")
        cfg = FeatureConfig(n_frames, strides, tuple(STATS[c] for c in codes))
        return cls(cfg, weights, biases, shift, scale, n_log, n_extra, version, metadata)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path):
        return cls.from_bytes(Path(path).read_bytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, field_name: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("file truncated", field_name)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field_name: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, field_name))

    def array(self, n: int, field_name: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, field_name), dtype="<f8").astype(np.float64)


# -- losses ---------------------------------------------------------------


@dataclass
class Batch:
    """Loss terms for one optimizer step; any part may be empty.

    ``ssl_*``: equivariance pairs (original, k-times accelerated, ln k).
    ``sup_*``: calibration pairs (features, ln true speed), weighted by ``lambda_sup``.
    ``bce_*``: detector pairs (features, 0/1 label).
    """

    ssl_orig: np.ndarray | None = None
    ssl_accel: np.ndarray | None = None
    ssl_log_k: np.ndarray | None = None
    sup_x: np.ndarray | None = None
    sup_log_speed: np.ndarray | None = None
    bce_x: np.ndarray | None = None
    bce_y: np.ndarray | None = None
    lambda_sup: float = 1.0

    def n_ssl(self) -> int:
        return 0 if self.ssl_orig is None else len(self.ssl_orig)

    def n_sup(self) -> int:
        return 0 if self.sup_x is None else len(self.sup_x)

    def n_bce(self) -> int:
        return 0 if self.bce_x is None else len(self.bce_x)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _stacked_inputs(model: Network, batch: Batch):
    blocks = []
    if batch.n_ssl():
        blocks += [batch.ssl_orig, batch.ssl_accel]
    if batch.n_sup():
        blocks.append(batch.sup_x)
    if batch.n_bce():
        blocks.append(batch.bce_x)
    return model.prepare(np.concatenate(blocks, axis=0)) if blocks else None


def _loss_from_outputs(out: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Total mean loss and d(loss)/d(output) for each stacked row."""
    grad = np.zeros_like(out)
    loss = 0.0
    pos = 0
    n = batch.n_ssl()
    if n:
        fo, fa = out[pos:pos + n], out[pos + n:pos + 2 * n]
        r = fa - (np.asarray(batch.ssl_log_k) + fo)
        loss += float(np.mean(r ** 2))
        grad[pos:pos + n] = -2.0 * r / n
        grad[pos + n:pos + 2 * n] = 2.0 * r / n
        pos += 2 * n
    m = batch.n_sup()
    if m:
        r = out[pos:pos + m] - np.asarray(batch.sup_log_speed)
        loss += batch.lambda_sup * float(np.mean(r ** 2))
        grad[pos:pos + m] = batch.lambda_sup * 2.0 * r / m
        pos += m
    q = batch.n_bce()
    if q:
        z = out[pos:pos + q]
        y = np.asarray(batch.bce_y, dtype=np.float64)
        loss += float(np.mean(_softplus(z) - y * z))
        grad[pos:pos + q] = (sigmoid(z) - y) / q
    return loss, grad


def batch_loss(model: Network, batch: Batch) -> float:
    z = _stacked_inputs(model, batch)
    if z is None:
        return 0.0
    return _loss_from_outputs(model.forward_prepared(z), batch)[0]


def loss_and_gradients(model: Network, batch: Batch):
    """Mean batch loss and its exact gradients, ordered like ``model.parameters()``."""
    z = _stacked_inputs(model, batch)
    if z is None:
        return 0.0, [np.zeros_like(p) for p in model.parameters()]
    out, acts = model._forward(z)
    loss, g = _loss_from_outputs(out, batch)
    gw, gb = model._backward(acts, g)
    return loss, [*gw, *gb]


def gradients(model: Network, batch: Batch) -> list[np.ndarray]:
    return loss_and_gradients(model, batch)[1]


class SGDMomentum:
    """Plain SGD with heavy-ball momentum and a fixed learning rate."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v
