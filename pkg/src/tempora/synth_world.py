"""Deterministic synthetic clips with known playback-speed profiles.

Within a segment of playback speed ``s`` on-screen motion advances ``s``
seconds of scene time per wall-clock second, and the scene's tone is
emitted at ``base_frequency * s``. Everything is a pure function of the
scene/tone specs, the profile and the seed.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ProfileError, TemporaError
from .media_core import AudioTrack, Clip, FrameSequence, SpeedProfile
from .media_io import write_clip

log = logging.getLogger(__name__)

KINDS = ("bouncing_ball", "oscillator", "translating_gradient")

# Real-time motion rates: px/s for the ball and gradient, cycles/s for the
# oscillator. Chosen so the three kinds produce similar frame-difference
# energy at equal playback speed on a 48x48 canvas.
DEFAULT_RATES = {
    "bouncing_ball": 36.0,
    "oscillator": 0.48,
    "translating_gradient": 7.5,
}
RATE_JITTER = 0.1
# per-frame sensor noise for generated datasets; it sets a motion-energy
# floor that makes ultra-slow clips (speed <~ 0.03) genuinely hard to read
DEFAULT_NOISE = 2e-4
MIN_STEP_RATIO = 1.3
MAX_STEP_RATIO = 4.0

BALL_VALUE = 0.85


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    physical_rate: float
    resolution: tuple[int, int] = (48, 48)
    duration_s: float = 3.2
    seed: int = 0
    noise: float = 0.0  # std of per-frame sensor noise, in [0, 1] pixel units

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TemporaError(f"unknown scene kind {self.kind!r}; expected one of {KINDS}")
        if not self.physical_rate > 0:
            raise TemporaError("physical_rate must be > 0")
        if not self.duration_s > 0:
            raise TemporaError("duration_s must be > 0")
        if not self.noise >= 0:
            raise TemporaError("noise must be >= 0")
        w, h = self.resolution
        if w < 16 or h < 16:
            raise TemporaError(f"resolution must be at least 16x16, got {w}x{h}")
        object.__setattr__(self, "resolution", (int(w), int(h)))


@dataclass(frozen=True)
class ToneSpec:
    base_frequency: float = 440.0
    amplitude: float = 0.5

    def __post_init__(self):
        if not 50.0 <= self.base_frequency <= 4000.0:
            raise TemporaError(f"base_frequency must be within [50, 4000] Hz, got {self.base_frequency}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise TemporaError(f"amplitude must be within [0, 1], got {self.amplitude}")


def _fold(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect ``x`` into ``[lo, hi]`` like a ball bouncing between walls."""
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    return lo + span - np.abs(y - span)


def _background(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    fx, fy = rng.uniform(0.5, 1.5, size=2) / max(w, h)
    px, py = rng.uniform(0, 2 * np.pi, size=2)
    return 0.25 + 0.06 * np.sin(2 * np.pi * fx * xx + px) * np.cos(2 * np.pi * fy * yy + py)


def _disc(bg: np.ndarray, cx: np.ndarray, cy: np.ndarray, radius: float) -> np.ndarray:
    h, w = bg.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # pixel centres at integer coordinates; one-pixel linear edge ramp
    dist = np.hypot(xx[None] - cx[:, None, None], yy[None] - cy[:, None, None])
    cover = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    return bg[None] * (1.0 - cover) + BALL_VALUE * cover


def render_frames(scene: SceneSpec, content_t: np.ndarray) -> np.ndarray:
    """Render the scene at the given scene times (seconds of real-world motion)."""
    frames = _render_clean(scene, content_t)
    if scene.noise > 0:
        noise_rng = np.random.default_rng([scene.seed, 1])
        frames = np.clip(frames + noise_rng.normal(0.0, scene.noise, frames.shape), 0.0, 1.0)
    return frames


def _render_clean(scene: SceneSpec, content_t: np.ndarray) -> np.ndarray:
    w, h = scene.resolution
    rng = np.random.default_rng(scene.seed)
    bg = _background(rng, w, h)
    size = min(w, h)
    if scene.kind == "bouncing_ball":
        r = 0.12 * size
        x0, y0 = rng.uniform(r, w - 1 - r), rng.uniform(r, h - 1 - r)
        theta = rng.uniform(0, 2 * np.pi)
        dist = scene.physical_rate * content_t
        cx = _fold(x0 + np.cos(theta) * dist, r, w - 1 - r)
        cy = _fold(y0 + np.sin(theta) * dist, r, h - 1 - r)
        return _disc(bg, cx, cy, r)
    if scene.kind == "oscillator":
        r = 0.12 * size
        orbit = 0.25 * size
        phase0 = rng.uniform(0, 2 * np.pi)
        angle = phase0 + 2 * np.pi * scene.physical_rate * content_t
        cx = (w - 1) / 2 + orbit * np.cos(angle)
        cy = (h - 1) / 2 + orbit * np.sin(angle)
        return _disc(bg, cx, cy, r)
    # translating_gradient
    theta = rng.uniform(0, 2 * np.pi)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = xx * np.cos(theta) + yy * np.sin(theta)
    shift = scene.physical_rate * content_t[:, None, None]
    lam1, lam2 = 0.75 * size, 0.3 * size
    img = (0.5
           + 0.2 * np.sin(2 * np.pi * (u[None] - shift) / lam1 + phases[0])
           + 0.08 * np.sin(2 * np.pi * (u[None] - shift) / lam2 + phases[1]))
    return np.clip(img, 0.0, 1.0)


def render_audio(tone: ToneSpec, profile: SpeedProfile, duration_s: float, sample_rate: float) -> AudioTrack:
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    # phase follows scene time, so the tone stays continuous across speed changes
    phase = 2 * np.pi * tone.base_frequency * profile.content_time(t)
    return AudioTrack(tone.amplitude * np.sin(phase), sample_rate)


def _as_profile(profile) -> SpeedProfile:
    return profile if isinstance(profile, SpeedProfile) else SpeedProfile(tuple(profile))


def render_clip(scene: SceneSpec, tone: ToneSpec | None, profile, fps: float = 30.0,
                sample_rate: float = 16000.0, clip_id: str = "") -> Clip:
    """Render video (and audio, when ``tone`` is given) under a speed profile."""
    profile = _as_profile(profile)
    if not (fps > 0 and sample_rate > 0):
        raise TemporaError("fps and sample_rate must be > 0")
    if abs(profile.duration_s - scene.duration_s) > 1e-9:
        raise ProfileError(
            f"profile covers [0, {profile.duration_s}] but the scene lasts {scene.duration_s}s"
        )
    n_frames = int(round(scene.duration_s * fps))
    content_t = profile.content_time(np.arange(n_frames) / fps)
    video = FrameSequence(render_frames(scene, content_t), fps)
    audio = None
    if tone is not None:
        audio = render_audio(tone, profile, n_frames / fps, sample_rate)
    true_speed = profile.segments[0][2] if len(profile.segments) == 1 else None
    return Clip(video, audio, true_speed, clip_id)


def log_uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    if lo == hi:
        return np.full(size, lo) if size is not None else lo
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


def _clip_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


@dataclass(frozen=True)
class ClipPlan:
    """Everything needed to render one dataset clip."""

    clip_id: str
    scene: SceneSpec
    tone: ToneSpec
    profile: SpeedProfile
    seed: int

    def sidecar(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "segments": self.profile.to_json(),
            "scene": asdict(self.scene) | {"resolution": list(self.scene.resolution)},
            "tone": asdict(self.tone),
            "seed": self.seed,
        }

    def render(self, fps: float, sample_rate: float) -> Clip:
        return render_clip(self.scene, self.tone, self.profile, fps, sample_rate, self.clip_id)


def _step_speeds(rng, lo, hi, n_changes):
    speeds = [float(log_uniform(rng, lo, hi))]
    for _ in range(n_changes):
        for _attempt in range(100):
            ratio = float(log_uniform(rng, MIN_STEP_RATIO, MAX_STEP_RATIO))
            options = [s for s in (speeds[-1] * ratio, speeds[-1] / ratio) if lo <= s <= hi]
            if options:
                speeds.append(options[int(rng.integers(len(options)))])
                break
        else:
            raise TemporaError(
                f"speed range ({lo}, {hi}) cannot hold a step of ratio >= {MIN_STEP_RATIO}"
            )
    return speeds


def plan_clip(seed: int, clip_id: str, speed_range: tuple[float, float], n_changes: int,
              duration_s: float = 3.2, resolution=(48, 48), kinds: Sequence[str] = KINDS,
              min_segment_s: float = 0.0, noise: float = DEFAULT_NOISE) -> ClipPlan:
    lo, hi = speed_range
    rng = np.random.default_rng(seed)
    kind = kinds[int(rng.integers(len(kinds)))]
    rate = DEFAULT_RATES[kind] * float(rng.uniform(1 - RATE_JITTER, 1 + RATE_JITTER))
    speeds = _step_speeds(rng, lo, hi, n_changes) if n_changes else [float(log_uniform(rng, lo, hi))]
    if n_changes:
        # change points stay clear of the clip ends and of each other
        margin = max(min_segment_s, 0.15 * duration_s)
        min_gap = max(min_segment_s, 0.2 * duration_s / n_changes)
        while True:
            times = np.sort(rng.uniform(margin, duration_s - margin, size=n_changes))
            if np.all(np.diff(times) >= min_gap):
                break
        profile = SpeedProfile.steps(speeds, [float(t) for t in times], duration_s)
    else:
        profile = SpeedProfile.constant(speeds[0], duration_s)
    f_hi = min(4000.0, 6000.0 / max(speeds))
    f_lo = min(f_hi, max(100.0, 150.0 / min(speeds)))
    tone = ToneSpec(float(log_uniform(rng, f_lo, f_hi)), 0.5)
    scene = SceneSpec(kind, rate, tuple(resolution), duration_s, int(rng.integers(2**63)), noise)
    return ClipPlan(clip_id, scene, tone, profile, seed)


def plan_dataset(n_clips: int, speed_range=(0.01, 1.0), change_fraction: float = 0.0, seed: int = 0,
                 duration_s: float = 3.2, resolution=(48, 48), kinds: Sequence[str] = KINDS,
                 n_changes: int = 1, prefix: str = "clip", noise: float = DEFAULT_NOISE) -> list[ClipPlan]:
    lo, hi = speed_range
    if not (0 < lo <= hi):
        raise TemporaError(f"speed range must satisfy 0 < lo <= hi, got {speed_range}")
    if n_clips < 1:
        raise TemporaError("n_clips must be >= 1")
    if not 0.0 <= change_fraction <= 1.0:
        raise TemporaError("change_fraction must be within [0, 1]")
    n_change = int(round(change_fraction * n_clips))
    rng = np.random.default_rng(seed)
    with_change = np.zeros(n_clips, dtype=bool)
    with_change[rng.permutation(n_clips)[:n_change]] = True
    seeds = _clip_seeds(seed, n_clips)
    return [
        plan_clip(seeds[i], f"{prefix}_{i:05d}", speed_range, n_changes if with_change[i] else 0,
                  duration_s, resolution, kinds, noise=noise)
        for i in range(n_clips)
    ]


def render_plans(plans: Sequence[ClipPlan], fps: float = 30.0, sample_rate: float = 16000.0,
                 threads: int = 1) -> list[Clip]:
    if threads <= 1:
        return [p.render(fps, sample_rate) for p in plans]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda p: p.render(fps, sample_rate), plans))


def make_dataset(n_clips: int, speed_range=(0.01, 1.0), change_fraction: float = 0.0, seed: int = 0,
                 out_dir: str | Path = "synth", duration_s: float = 3.2, fps: float = 30.0,
                 sample_rate: float = 16000.0, resolution=(48, 48), kinds: Sequence[str] = KINDS,
                 n_changes: int = 1, noise: float = DEFAULT_NOISE, prefix: str = "clip",
                 threads: int = 1) -> list[dict]:
    """Render ``n_clips`` clips to ``out_dir`` with JSON ground-truth sidecars.

    Speeds are log-uniform in ``speed_range``; a ``change_fraction`` share of
    clips gets ``n_changes`` speed steps of ratio >= 1.3. Returns the manifest
    (one entry per clip), which is also written to ``manifest.json``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    plans = plan_dataset(n_clips, speed_range, change_fraction, seed, duration_s, resolution,
                         kinds, n_changes, prefix, noise)

    def emit(plan: ClipPlan) -> dict:
        clip = plan.render(fps, sample_rate)
        path = out_dir / f"{plan.clip_id}.chrn"
        write_clip(clip, path, sidecar=plan.sidecar())
        return {"clip_id": plan.clip_id, "path": path.name, "sidecar": path.with_suffix(".json").name,
                "n_changes": len(plan.profile.segments) - 1}

    if threads <= 1:
        manifest = [emit(p) for p in plans]
    else:
        with ThreadPoolExecutor(threads) as pool:
            manifest = list(pool.map(emit, plans))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d clips to %s", len(manifest), out_dir)
    return manifest


def load_dataset(directory: str | Path) -> list[tuple[Clip, SpeedProfile]]:
    """Read a ``make_dataset`` tree back as (clip, ground-truth profile) pairs."""
    from .media_io import read_clip, read_sidecar

    directory = Path(directory)
    out = []
    for entry in json.loads((directory / "manifest.json").read_text()):
        path = directory / entry["path"]
        clip = read_clip(path)
        meta = read_sidecar(path)
        segs = meta["segments"]
        # stored segment ends may differ from the quantized clip duration by rounding
        out.append((clip, SpeedProfile.from_json(segs)))
    return out
