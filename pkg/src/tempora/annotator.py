"""Annotation pipeline: cut footage at detected speed changes, estimate each span's speed, bucket it.

Output is a JSON Lines manifest with one record per homogeneous span and a
closing ``{"_summary": ...}`` line.
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

from .change_model import DEFAULT_WINDOW_S, detect
from .errors import DomainError, TemporaError
from .media_core import Clip, FrameSequence, crop_audio
from .media_io import read_clip, write_clip
from .network import Network
from .speed_model import predict_iterative
from .version import TOOL_VERSION

log = logging.getLogger(__name__)

SPEED_LO = 0.01
SPEED_HI = 1.0
N_BUCKETS = 10


@dataclass(frozen=True)
class AnnotationRecord:
    clip_id: str
    source_path: str
    start_frame: int
    end_frame: int
    predicted_speed: float  # clamped to at most 1.0
    bucket_id: int
    iterations_used: int
    detector_confidence: float | None  # 1 - highest change probability inside the span
    tool_version: str
    raw_predicted_speed: float  # estimator output before clamping

    def __post_init__(self):
        if not self.start_frame < self.end_frame:
            raise TemporaError(f"empty span [{self.start_frame}, {self.end_frame})")
        if not self.predicted_speed > 0:
            raise DomainError(f"predicted speed must be > 0, got {self.predicted_speed}")
        if self.bucket_id < 0:
            raise TemporaError(f"bucket id must be >= 0, got {self.bucket_id}")

    def to_json(self) -> dict:
        return asdict(self)


def compute_bucket_id(speed: float, n_buckets: int = N_BUCKETS) -> int:
    """Log-spaced bucket of ``speed`` over [0.01, 1]; speeds outside are clamped first."""
    if not speed > 0:
        raise DomainError(f"speed must be > 0, got {speed}")
    if n_buckets < 1:
        raise TemporaError(f"n_buckets must be >= 1, got {n_buckets}")
    s = min(max(float(speed), SPEED_LO), SPEED_HI)
    pos = (math.log(s) - math.log(SPEED_LO)) / (math.log(SPEED_HI) - math.log(SPEED_LO))
    return min(max(math.floor(pos * n_buckets), 0), n_buckets - 1)


def scan_windows(n_frames: int, n_win: int, n_stride: int) -> list[int]:
    return list(range(0, n_frames - n_win + 1, n_stride))


def _merge_short(bounds: list[int], min_len: int) -> list[int]:
    """Drop cut points until every span is at least ``min_len`` long.

    The shortest offending span is merged into its longer neighbour first.
    """
    bounds = list(bounds)
    while len(bounds) > 2:
        lengths = np.diff(bounds)
        i = int(np.argmin(lengths))
        if lengths[i] >= min_len:
            break
        if i == 0:
            del bounds[1]
        elif i == len(lengths) - 1:
            del bounds[-2]
        elif lengths[i - 1] >= lengths[i + 1]:
            del bounds[i]  # joins span i to its left neighbour
        else:
            del bounds[i + 1]
    return bounds


def segment_by_changes(video: FrameSequence, detector: Network, window_s: float = DEFAULT_WINDOW_S,
                       stride_s: float | None = None, return_scores: bool = False):
    """Split ``video`` into spans of homogeneous speed.

    The detector scans windows of ``window_s`` every ``stride_s`` (default
    half a window). Runs of consecutive positive windows form one change
    region and the cut goes at the centre of that region. Spans shorter
    than a window are folded into their longer neighbour. Returns
    ``(start_frame, end_frame)`` pairs covering every frame once; with
    ``return_scores`` also the ``(start, probability)`` of every window.
    """
    stride_s = window_s / 2 if stride_s is None else stride_s
    n = len(video)
    fps = video.native_fps
    n_win = int(round(window_s * fps))
    n_stride = max(1, int(round(stride_s * fps)))
    if n < n_win:
        log.warning("video has %d frames, shorter than one %d-frame window; not segmenting", n, n_win)
        return ([(0, n)], []) if return_scores else [(0, n)]

    starts = scan_windows(n, n_win, n_stride)
    scores = [(s, detect(detector, video.crop(s, s + n_win))[0]) for s in starts]
    positive = [p >= 0.5 for _, p in scores]

    cuts = []
    i = 0
    while i < len(starts):
        if not positive[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(starts) and positive[j + 1]:
            j += 1
        centre = (starts[i] + starts[j] + n_win) / 2
        cuts.append(int(math.floor(centre + 0.5)))
        i = j + 1
    bounds = [0] + [c for c in cuts if 0 < c < n] + [n]
    bounds = _merge_short(sorted(set(bounds)), n_win)
    spans = list(zip(bounds[:-1], bounds[1:]))
    return (spans, scores) if return_scores else spans


def _span_confidence(scores, span, n_win) -> float | None:
    inside = [p for s, p in scores if s >= span[0] and s + n_win <= span[1]]
    return 1.0 - max(inside) if inside else None


def _sources(root: Path) -> list[Path]:
    if root.is_file():
        return [root]
    found = [p for p in root.rglob("*.chrn")]
    found += [d for d in root.rglob("*") if d.is_dir() and any(d.glob("*.png"))]
    return sorted(found)


def annotate_clip(clip: Clip, source_path: str, estimator: Network, detector: Network,
                  iterations: int = 3, window_s: float = DEFAULT_WINDOW_S, stride_s: float | None = None,
                  n_buckets: int = N_BUCKETS, export_dir: Path | None = None,
                  stem: str | None = None) -> list[AnnotationRecord]:
    video = clip.video
    spans, scores = segment_by_changes(video, detector, window_s, stride_s, return_scores=True)
    n_win = int(round(window_s * video.native_fps))
    stem = stem or clip.clip_id or "clip"
    records = []
    for i, (a, b) in enumerate(spans):
        trace = predict_iterative(estimator, video.crop(a, b), iterations)
        raw = trace.final_speed
        rec = AnnotationRecord(f"{stem}_{i:03d}", source_path, a, b, min(raw, SPEED_HI),
                               compute_bucket_id(raw, n_buckets), trace.iterations_used,
                               _span_confidence(scores, (a, b), n_win), TOOL_VERSION, raw)
        records.append(rec)
        if export_dir is not None:
            audio = None
            if clip.audio is not None:
                fps = video.native_fps
                audio = crop_audio(clip.audio, a / fps, b / fps)
            write_clip(Clip(video.crop(a, b), audio, None, rec.clip_id), export_dir / f"{rec.clip_id}.chrn")
    return records


def annotate(source, estimator: Network, detector: Network, iterations: int = 3,
             out_path: str | Path | None = None, window_s: float = DEFAULT_WINDOW_S,
             stride_s: float | None = None, n_buckets: int = N_BUCKETS,
             export_dir: str | Path | None = None, threads: int = 1) -> list[AnnotationRecord]:
    """Annotate a clip, a clip file or a directory tree of clips.

    Unreadable sources are skipped and listed in the manifest footer.
    Records are ordered by (source_path, start_frame). With ``out_path`` the
    manifest is written as JSON Lines.
    """
    export = Path(export_dir) if export_dir is not None else None
    if export is not None:
        export.mkdir(parents=True, exist_ok=True)
    kw = dict(iterations=iterations, window_s=window_s, stride_s=stride_s, n_buckets=n_buckets,
              export_dir=export)

    if isinstance(source, Clip):
        jobs = [(source.clip_id or "clip", lambda c=source: c)]
    else:
        root = Path(source)
        if not root.exists():
            raise FileNotFoundError(f"input {root} does not exist")
        base = root.parent if root.is_file() else root
        jobs = [(p.relative_to(base).as_posix(), lambda p=p: read_clip(p)) for p in _sources(root)]

    def run(job):
        name, load = job
        try:
            clip = load()
            stem = Path(name).stem if not isinstance(source, Clip) else None
            return annotate_clip(clip, name, estimator, detector, stem=stem, **kw), None
        except (TemporaError, OSError, ValueError) as exc:
            log.warning("skipping %s: %s", name, exc)
            return [], {"source_path": name, "error": f"{type(exc).__name__}: {exc}"}

    if threads <= 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    records = sorted((r for recs, _ in results for r in recs), key=lambda r: (r.source_path, r.start_frame))
    errors = sorted((e for _, e in results if e is not None), key=lambda e: e["source_path"])
    if out_path is not None:
        write_manifest(records, errors, out_path)
    return records


def manifest_lines(records: Sequence[AnnotationRecord], errors: Sequence[dict] = ()) -> list[str]:
    lines = [json.dumps(r.to_json(), ensure_ascii=False) for r in records]
    summary = {"n_records": len(records), "n_errors": len(errors), "tool_version": TOOL_VERSION,
               "errors": list(errors)}
    lines.append(json.dumps({"_summary": summary}, ensure_ascii=False))
    return lines


def write_manifest(records: Sequence[AnnotationRecord], errors: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text("\n".join(manifest_lines(records, errors)) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> tuple[list[AnnotationRecord], dict]:
    records, summary = [], {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "_summary" in obj:
            summary = obj["_summary"]
        else:
            records.append(AnnotationRecord(**obj))
    return records, summary
