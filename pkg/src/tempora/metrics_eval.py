"""Speed-estimation and detection metrics.

Speed metrics are computed on natural-log speeds: correlation of log
predictions with log truth, RMSE of log ratios, and ``exp(RMSE)`` as the
typical multiplicative error.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, UndefinedCorrelationError, TemporaError


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise TemporaError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def _positive(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise TemporaError(f"{name} is empty")
    if not np.all(arr > 0):
        raise DomainError(f"{name} must be strictly positive")
    return arr


def rmse_log(pred, truth) -> tuple[float, float]:
    """(RMSE of ln pred - ln truth, exp of that RMSE)."""
    p, t = _positive(pred, "pred"), _positive(truth, "truth")
    if len(p) != len(t):
        raise TemporaError(f"length mismatch: {len(p)} vs {len(t)}")
    rmse = float(np.sqrt(np.mean((np.log(p) - np.log(t)) ** 2)))
    return rmse, exp_rmse(rmse)


def exp_rmse(rmse: float) -> float:
    return math.exp(rmse)


@dataclass(frozen=True)
class SpeedEvalReport:
    pearson_rho: float
    spearman_rs: float
    rmse_log: float
    n: int
    items: list[dict] = field(default_factory=list)

    @property
    def exp_rmse(self) -> float:
        return exp_rmse(self.rmse_log)

    def to_json(self) -> dict:
        d = asdict(self)
        d["exp_rmse"] = self.exp_rmse
        return d

    def table(self, label: str = "model") -> str:
        head = f"{'method':<12} {'rho':>7} {'r_s':>7} {'RMSE':>7} {'e^RMSE':>7}"
        row = (f"{label:<12} {self.pearson_rho:>7.3f} {self.spearman_rs:>7.3f} "
               f"{self.rmse_log:>7.3f} {self.exp_rmse:>7.3f}")
        return f"{head}\n{row}\n"


def evaluate_speeds(pred: Sequence[float], truth: Sequence[float], ids: Sequence[str] | None = None) -> SpeedEvalReport:
    p, t = _positive(pred, "pred"), _positive(truth, "truth")
    rmse, _ = rmse_log(p, t)
    lp, lt = np.log(p), np.log(t)
    try:
        rho, rs = pearson(lp, lt), spearman(lp, lt)
    except UndefinedCorrelationError:
        rho = rs = float("nan")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(p))]
    items = [{"id": i, "predicted": float(a), "truth": float(b), "log_error": float(math.log(a / b))}
             for i, a, b in zip(ids, p, t)]
    return SpeedEvalReport(rho, rs, rmse, len(p), items)


@dataclass(frozen=True)
class DetectionReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def confusion(self) -> list[list[int]]:
        """Rows = truth (0, 1), columns = prediction (0, 1)."""
        return [[self.tn, self.fp], [self.fn, self.tp]]

    def to_json(self) -> dict:
        return asdict(self) | {"confusion": self.confusion}


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def detection_scores(pred_labels, true_labels) -> DetectionReport:
    p = np.asarray(pred_labels).astype(int).reshape(-1)
    t = np.asarray(true_labels).astype(int).reshape(-1)
    if len(p) != len(t) or len(p) == 0:
        raise TemporaError("label vectors must be non-empty and of equal length")
    if not (set(np.unique(p)) | set(np.unique(t))) <= {0, 1}:
        raise TemporaError("labels must be 0 or 1")
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    tn = int(np.sum((p == 0) & (t == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return DetectionReport((tp + tn) / len(p), precision, recall, _f1(precision, recall), tp, fp, fn, tn)


@dataclass(frozen=True)
class EventScores:
    precision: float
    recall: float
    f1: float
    matches: list[tuple[float, float]]


def event_f1(pred_events: Sequence[float], true_events: Sequence[float], tolerance_s: float) -> EventScores:
    """Greedy one-to-one matching in time order within ``tolerance_s``.

    Each prediction, taken in time order, claims the nearest still-unmatched
    true event within tolerance.
    """
    if not tolerance_s > 0:
        raise TemporaError("tolerance_s must be > 0")
    pred = sorted(float(t) for t in pred_events)
    truth = sorted(float(t) for t in true_events)
    if not pred and not truth:
        return EventScores(1.0, 1.0, 1.0, [])
    used = [False] * len(truth)
    matches = []
    for p in pred:
        best = None
        for j, t in enumerate(truth):
            if used[j] or abs(p - t) > tolerance_s:
                continue
            if best is None or abs(p - t) < abs(p - truth[best]):
                best = j
        if best is not None:
            used[best] = True
            matches.append((p, truth[best]))
    precision = len(matches) / len(pred) if pred else 0.0
    recall = len(matches) / len(truth) if truth else 0.0
    return EventScores(precision, recall, _f1(precision, recall), matches)


def report_json(obj) -> str:
    return json.dumps(obj.to_json() if hasattr(obj, "to_json") else obj, indent=1, sort_keys=True)
