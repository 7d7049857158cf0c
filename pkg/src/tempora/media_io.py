"""Reading and writing clips, WAV audio and PNG frame directories.

The raw clip container (``.chrn``) is little-endian::

    magic "CHRN" | version u16 | width u16 | height u16 | channels u8
    frame_count u32 | fps f32 | audio_flag u8
    frame payload: N*H*W*C u8, frame-major, row-major, channel-interleaved
    if audio_flag: sample_rate u32 | sample_count u64 | i16 samples

Pixels are stored as ``round(p * 255)``, audio as ``round(x * 32767)``; a
clip whose values already sit on those grids round-trips bit-exactly.
Fields the container has no room for (clip id, ground-truth speed) travel
in an optional JSON sidecar next to the file.
"""
from __future__ import annotations

import json
import re
import struct
import wave
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, UnsupportedChannelsError
from .media_core import AudioTrack, Clip, FrameSequence, SpeedProfile

MAGIC = b"CHRN"
VERSION = 1
_HEADER = struct.Struct("<4sHHHBIfB")
_AUDIO_HEADER = struct.Struct("<IQ")
PCM_SCALE = 32767.0


def quantize_frames(frames: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(frames) * 255.0 + 0.5).astype(np.uint8)


def quantize_audio(samples: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(samples, -1.0, 1.0) * PCM_SCALE + 0.5).astype("<i2")


def quantized(clip: Clip) -> Clip:
    """The clip as it will read back after a write/read cycle."""
    video = FrameSequence(quantize_frames(clip.video.frames) / 255.0, np.float32(clip.video.native_fps))
    audio = None
    if clip.audio is not None:
        audio = AudioTrack(quantize_audio(clip.audio.samples) / PCM_SCALE, int(round(clip.audio.sample_rate)))
    return Clip(video, audio, clip.true_speed, clip.clip_id)


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def encode_clip(clip: Clip) -> bytes:
    video = clip.video
    if video.channels not in (1, 3):
        raise UnsupportedChannelsError(video.channels)
    audio_flag = 1 if clip.audio is not None else 0
    parts = [
        _HEADER.pack(MAGIC, VERSION, video.width, video.height, video.channels,
                     len(video), video.native_fps, audio_flag),
        quantize_frames(video.frames).tobytes(),
    ]
    if clip.audio is not None:
        pcm = quantize_audio(clip.audio.samples)
        parts.append(_AUDIO_HEADER.pack(int(round(clip.audio.sample_rate)), pcm.shape[0]))
        parts.append(pcm.tobytes())
    return b"".join(parts)


def decode_clip(data: bytes, clip_id: str = "") -> Clip:
    if len(data) < _HEADER.size:
        raise FormatError(f"file is {len(data)} bytes, shorter than the {_HEADER.size}-byte header", "header")
    magic, version, width, height, channels, count, fps, audio_flag = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", "magic")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", "version")
    if channels not in (1, 3):
        raise UnsupportedChannelsError(channels)
    if width == 0 or height == 0:
        raise FormatError("frame dimensions must be non-zero", "width" if width == 0 else "height")
    if count == 0:
        raise FormatError("clip has no frames", "frame_count")
    if not (np.isfinite(fps) and fps > 0):
        raise FormatError(f"invalid fps {fps}", "fps")
    if audio_flag not in (0, 1):
        raise FormatError(f"invalid audio flag {audio_flag}", "audio_flag")

    offset = _HEADER.size
    n_pix = count * height * width * channels
    if len(data) < offset + n_pix:
        raise FormatError(f"expected {n_pix} pixel bytes, found {len(data) - offset}", "payload")
    pix = np.frombuffer(data, dtype=np.uint8, count=n_pix, offset=offset)
    shape = (count, height, width) if channels == 1 else (count, height, width, channels)
    video = FrameSequence(pix.reshape(shape) / 255.0, float(fps))
    offset += n_pix

    audio = None
    if audio_flag:
        if len(data) < offset + _AUDIO_HEADER.size:
            raise FormatError("audio header truncated", "audio_header")
        sample_rate, n_samples = _AUDIO_HEADER.unpack_from(data, offset)
        offset += _AUDIO_HEADER.size
        if sample_rate == 0:
            raise FormatError("sample rate must be > 0", "sample_rate")
        if len(data) < offset + 2 * n_samples:
            raise FormatError(f"expected {n_samples} audio samples", "audio_payload")
        pcm = np.frombuffer(data, dtype="<i2", count=n_samples, offset=offset)
        audio = AudioTrack(pcm / PCM_SCALE, sample_rate)
        offset += 2 * n_samples
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after payload", "payload")
    return Clip(video, audio, None, clip_id)


def write_clip(clip: Clip, path: str | Path, sidecar: dict | None = None) -> None:
    """Write ``clip`` as a ``.chrn`` container.

    A JSON sidecar is written when ``sidecar`` is given or the clip carries
    a ground-truth speed, so that ``read_clip`` restores every field.
    """
    path = Path(path)
    path.write_bytes(encode_clip(clip))
    if sidecar is None and clip.true_speed is not None:
        sidecar = {
            "clip_id": clip.clip_id,
            "segments": SpeedProfile.constant(clip.true_speed, clip.video.duration_s).to_json(),
        }
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_clip(path: str | Path) -> Clip:
    """Read a ``.chrn`` file or a PNG frame directory, plus any sidecar."""
    path = Path(path)
    if path.is_dir():
        return Clip(read_png_dir(path), None, None, path.name)
    clip = decode_clip(path.read_bytes(), clip_id=path.stem)
    meta = read_sidecar(path)
    if meta is None:
        return clip
    true_speed = meta.get("true_speed")
    segments = meta.get("segments") or []
    if true_speed is None and len(segments) == 1:
        true_speed = segments[0]["speed"]
    return Clip(clip.video, clip.audio, true_speed, meta.get("clip_id", clip.clip_id))


def read_sidecar(path: str | Path) -> dict | None:
    side = sidecar_path(path)
    if not side.exists():
        return None
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"sidecar {side.name} is not valid JSON: {exc}", "sidecar") from exc


def read_wav(path: str | Path) -> AudioTrack:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise FormatError(f"only 16-bit PCM is supported, got {8 * w.getsampwidth()}-bit", "sample_width")
        if w.getnchannels() != 1:
            raise FormatError(f"only mono is supported, got {w.getnchannels()} channels", "channels")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return AudioTrack(np.frombuffer(raw, dtype="<i2") / PCM_SCALE, rate)


def write_wav(audio: AudioTrack, path: str | Path) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(round(audio.sample_rate)))
        w.writeframes(quantize_audio(audio.samples).tobytes())


_META_NAMES = ("metadata.txt", "meta.txt")


def _parse_meta(text: str) -> dict[str, str]:
    meta = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"expected key=value, got {line!r}", "metadata")
        meta[key.strip()] = value.strip()
    return meta


def read_png_dir(directory: str | Path) -> FrameSequence:
    """Load numbered PNG frames plus a ``key=value`` metadata file (width, height, fps)."""
    directory = Path(directory)
    meta_file = next((directory / n for n in _META_NAMES if (directory / n).exists()), None)
    if meta_file is None:
        raise FormatError(f"no metadata.txt in {directory}", "metadata")
    meta = _parse_meta(meta_file.read_text())
    try:
        width, height, fps = int(meta["width"]), int(meta["height"]), float(meta["fps"])
    except KeyError as exc:
        raise FormatError("missing key", exc.args[0]) from None
    except ValueError as exc:
        raise FormatError(str(exc), "metadata") from None

    def frame_number(p: Path) -> int:
        digits = re.findall(r"\d+", p.stem)
        return int(digits[-1]) if digits else -1

    files = sorted((p for p in directory.glob("*.png") if frame_number(p) >= 0), key=frame_number)
    if not files:
        raise FormatError(f"no numbered PNG frames in {directory}", "frame_count")
    frames = []
    for p in files:
        with Image.open(p) as im:
            if im.size != (width, height):
                raise FormatError(f"{p.name} is {im.size}, metadata says {(width, height)}", "width")
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im.convert("L"))
            elif im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise FormatError(f"unsupported PNG mode {im.mode}", "channels")
        frames.append(arr)
    if len({f.shape for f in frames}) != 1:
        raise FormatError("frames mix grayscale and colour", "channels")
    return FrameSequence(np.stack(frames) / 255.0, fps)


def write_png_dir(video: FrameSequence, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pix = quantize_frames(video.frames)
    for i, frame in enumerate(pix):
        Image.fromarray(frame).save(directory / f"frame_{i:05d}.png")
    (directory / "metadata.txt").write_text(
        f"width={video.width}\nheight={video.height}\nfps={video.native_fps!r}\n"
    )
