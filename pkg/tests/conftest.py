"""Shared fixtures: benchmark datasets and models trained once per session."""
from __future__ import annotations

import time

import numpy as np
import pytest

from tempora.change_model import harvested_windows, protocol_windows, train_detector
from tempora.speed_model import TrainConfig, train
from tempora.synth_world import load_dataset, make_dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


class Timed:
    def __init__(self):
        self.seconds = {}

    def __call__(self, key, fn, *a, **kw):
        t = time.process_time()
        out = fn(*a, **kw)
        self.seconds[key] = time.process_time() - t
        return out


@pytest.fixture(scope="session")
def timings():
    return Timed()


@pytest.fixture(scope="session")
def speed_benchmark(tmp_path_factory, timings):
    """Reference estimator setup: 200 training clips, 100 test clips, 20 labeled, default config."""

    def build():
        root = tmp_path_factory.mktemp("speed")
        make_dataset(200, (0.01, 1.0), 0.0, seed=1, out_dir=root / "train")
        make_dataset(100, (0.01, 1.0), 0.0, seed=2, out_dir=root / "test")
        train_clips = [c for c, _ in load_dataset(root / "train")]
        test_clips = [c for c, _ in load_dataset(root / "test")]
        model, history = train(train_clips, train_clips[:20], TrainConfig())
        return model, history, test_clips

    model, history, test_clips = timings("speed_benchmark", build)
    return {"model": model, "history": history, "test": test_clips,
            "cpu_seconds": timings.seconds["speed_benchmark"]}


@pytest.fixture(scope="session")
def detector_benchmark(tmp_path_factory, timings):
    """Detector trained on audio-harvested labels and a balanced ground-truth test set."""

    def build():
        root = tmp_path_factory.mktemp("detector")
        make_dataset(300, (0.01, 1.0), 0.75, seed=11, out_dir=root / "train", duration_s=4.0, prefix="tr")
        make_dataset(400, (0.01, 1.0), 0.75, seed=12, out_dir=root / "test", duration_s=2.0, prefix="te")
        train_clips = [c for c, _ in load_dataset(root / "train")]
        windows = harvested_windows(train_clips)
        model, losses = train_detector(windows)
        test = load_dataset(root / "test")
        labels = [protocol_windows(p, len(c.video), c.video.native_fps, 2.0)[0][2] for c, p in test]
        pos = [t for t, y in zip(test, labels) if y == 1]
        neg = [t for t, y in zip(test, labels) if y == 0]
        n = min(len(pos), len(neg))
        return model, losses, train_clips, pos[:n] + neg[:n]

    model, losses, train_clips, balanced = timings("detector_benchmark", build)
    return {"model": model, "losses": losses, "train": train_clips, "test": balanced,
            "cpu_seconds": timings.seconds["detector_benchmark"]}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
