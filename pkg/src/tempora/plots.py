"""Static SVG figures. Output is byte-stable for identical inputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "tempora", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_loss(batch_loss: Sequence[float], path: str | Path, smoothed: Sequence[float] | None = None,
              title: str = "training loss") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(np.arange(len(batch_loss)), batch_loss, lw=0.6, alpha=0.5, label="batch")
        if smoothed is not None and len(smoothed):
            off = len(batch_loss) - len(smoothed)
            ax.plot(np.arange(len(smoothed)) + off / 2, smoothed, lw=1.5, label="smoothed")
        ax.set_yscale("log")
        ax.set_xlabel("batch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_spectrogram(magnitudes: np.ndarray, times: np.ndarray, bin_hz: float, path: str | Path,
                     pitch_hz: np.ndarray | None = None, events: Sequence[float] = (),
                     max_hz: float = 4000.0) -> None:
    top = min(magnitudes.shape[1], int(max_hz / bin_hz) + 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.imshow(20 * np.log10(magnitudes[:, :top].T + 1e-9), origin="lower", aspect="auto",
                  extent=(times[0], times[-1], 0, top * bin_hz), cmap="magma")
        if pitch_hz is not None:
            ax.plot(times, pitch_hz, color="cyan", lw=1.0)
        for t in events:
            ax.axvline(t, color="white", ls="--", lw=1.0)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("frequency (Hz)")
        fig.tight_layout()
        _save(fig, path)


def plot_speed_curve(spans: Sequence[tuple[float, float, float]], path: str | Path,
                     truth: Sequence[tuple[float, float, float]] = ()) -> None:
    """Step plot of (start_s, end_s, speed) spans on a log axis."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for i, (a, b, s) in enumerate(spans):
            ax.plot([a, b], [s, s], color="C0", lw=2, label="estimated" if i == 0 else None)
        for i, (a, b, s) in enumerate(truth):
            ax.plot([a, b], [s, s], color="C1", lw=1, ls="--", label="true" if i == 0 else None)
        ax.set_yscale("log")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("playback speed")
        if spans or truth:
            ax.legend()
        fig.tight_layout()
        _save(fig, path)
