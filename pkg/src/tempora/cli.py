"""Command-line interface: ``tempora <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every run writes a
run manifest (resolved flags, seed, version, timestamps, outputs) next to
its main output, on success and on failure alike.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .version import TOOL_VERSION

# -- run manifest -------------------------------------------------------------


class RunManifest:
    def __init__(self, subcommand: str, config: dict, argv: list[str]):
        self.subcommand = subcommand
        self.config = config
        self.argv = argv
        self.seed = config.get("seed")
        self.started = datetime.now(timezone.utc).isoformat()
        self.finished: str | None = None
        self.outputs: list[str] = []
        self.status = "running"
        self.error: str | None = None

    def to_json(self) -> dict:
        return {"subcommand": self.subcommand, "config": self.config, "argv": self.argv, "seed": self.seed,
                "tool_version": TOOL_VERSION, "started": self.started, "finished": self.finished,
                "outputs": self.outputs, "status": self.status, "error": self.error}

    def write(self, path: Path) -> None:
        self.finished = datetime.now(timezone.utc).isoformat()
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


def _resolved_argv(parser: argparse.ArgumentParser, args: argparse.Namespace, prefix: list[str]) -> list[str]:
    """Flags with every default materialized, so the run can be replayed verbatim."""
    out = list(prefix)
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        value = getattr(args, action.dest, None)
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                out.append(flag)
        elif value is not None:
            out.append(flag)
            if isinstance(value, (list, tuple)):
                out.extend(str(v) for v in value)
            else:
                out.append(str(value))
    return out


def _manifest_path(args) -> Path:
    if getattr(args, "run_manifest", None):
        return Path(args.run_manifest)
    out = getattr(args, "out", None)
    if out:
        out = Path(out)
        return out.parent / f"{out.name}.run.json"
    return Path("tempora_run.json")


# -- input helpers --------------------------------------------------------------


def _load_clips(path: str):
    """(name, clip) pairs from a clip file, PNG directory or directory tree."""
    from .annotator import _sources
    from .media_io import read_clip

    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"input {root} does not exist")
    if root.is_dir() and any(root.glob("*.png")):
        return [(root.name, read_clip(root))]
    if root.is_file():
        return [(root.stem, read_clip(root))]
    return [(p.relative_to(root).with_suffix("").as_posix(), read_clip(p)) for p in _sources(root)]


def _load_profiles(path: str) -> dict:
    """clip_id -> ground-truth SpeedProfile from a dataset directory's sidecars."""
    from .media_core import SpeedProfile

    out = {}
    for side in sorted(Path(path).rglob("*.json")):
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(meta, dict) and "segments" in meta:
            out[meta.get("clip_id", side.stem)] = SpeedProfile.from_json(meta["segments"])
    return out


def _load_speeds(path: str) -> dict[str, float]:
    """clip_id -> speed from a dataset directory, a JSON table or a JSONL manifest."""
    p = Path(path)
    if p.is_dir():
        return {k: v.speeds[0] for k, v in _load_profiles(path).items() if len(v.segments) == 1}
    text = p.read_text()
    if p.suffix == ".jsonl":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        rows = [r for r in rows if "_summary" not in r]
        per_source: dict[str, list] = {}
        for r in rows:
            per_source.setdefault(Path(r["source_path"]).stem, []).append(r)
        out = {}
        for stem, recs in per_source.items():
            if len(recs) == 1:
                out[stem] = recs[0]["predicted_speed"]
            else:
                out.update({r["clip_id"]: r["predicted_speed"] for r in recs})
        return out
    data = json.loads(text)
    if isinstance(data, dict) and "clips" in data:
        data = data["clips"]
    if isinstance(data, dict):
        return {str(k): float(v) for k, v in data.items()}
    out = {}
    for row in data:
        for key in ("final_speed", "predicted_speed", "speed", "true_speed"):
            if key in row:
                out[str(row["clip_id"])] = float(row[key])
                break
    return out


def _write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _train_config(args, base):
    from .speed_model import TrainConfig

    return TrainConfig(
        epochs=args.epochs if args.epochs is not None else base.epochs,
        batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
        learning_rate=args.lr if args.lr is not None else base.learning_rate,
        lambda_sup=args.lambda_sup if args.lambda_sup is not None else base.lambda_sup,
        k_sampler=args.k_sampler if args.k_sampler is not None else base.k_sampler,
        k_max=base.k_max,
        seed=args.seed,
        labeled_share=base.labeled_share,
    )


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args, run: RunManifest) -> None:
    from .synth_world import make_dataset

    make_dataset(args.n, (args.speed_min, args.speed_max), args.change_fraction, args.seed, args.out,
                 args.duration, args.fps, args.sample_rate, tuple(args.resolution), n_changes=args.n_changes,
                 noise=args.noise, threads=args.threads)
    run.outputs.append(str(args.out))
    print(f"wrote {args.n} clips to {args.out}")


def cmd_detect_changes(args, run: RunManifest) -> None:
    from .audio_analysis import audio_events, harvest_labels, stft, track_pitch
    from .change_model import DetectorModel, detect
    from .motion_features import flow_baseline_ratio

    clips = _load_clips(args.input)
    if args.method == "visual" and not args.model:
        raise ValueError("--method visual needs --model")
    model = DetectorModel.load(args.model) if args.method == "visual" else None
    plot_dir = Path(args.plots) if args.plots else None
    if plot_dir:
        plot_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for name, clip in clips:
        entry = {"clip_id": clip.clip_id or name, "fps": clip.video.native_fps, "n_frames": len(clip.video)}
        if args.method == "audio":
            if clip.audio is None:
                entry["error"] = "clip has no audio"
            else:
                events = audio_events(clip.audio)
                entry["events"] = [e.to_json() for e in events]
                entry["windows"] = [asdict(w) for w in harvest_labels(clip, args.window, args.stride, events)]
                if plot_dir:
                    from .plots import plot_spectrogram

                    spec = stft(clip.audio)
                    track = track_pitch(spec)
                    path = plot_dir / f"{Path(name).name}_spectrogram.svg"
                    plot_spectrogram(spec.magnitudes, spec.frame_times, spec.bin_hz, path, track.hz,
                                     [e.time_s for e in events])
                    run.outputs.append(str(path))
        else:
            fps = clip.video.native_fps
            n_win = int(round(args.window * fps))
            n_stride = max(1, int(round((args.stride or args.window / 2) * fps)))
            windows = []
            for f0 in range(0, len(clip.video) - n_win + 1, n_stride):
                w = clip.video.crop(f0, f0 + n_win)
                if args.method == "visual":
                    p, pos = detect(model, w)
                    windows.append({"start_frame": f0, "end_frame": f0 + n_win, "probability": p,
                                    "positive": bool(pos)})
                else:
                    r = flow_baseline_ratio(w)
                    windows.append({"start_frame": f0, "end_frame": f0 + n_win, "ratio": r,
                                    "positive": bool(r > args.threshold)})
            entry["windows"] = windows
        results.append(entry)
    out = {"method": args.method, "window_s": args.window, "clips": results}
    if args.method == "flow":
        out["threshold"] = args.threshold
    run.outputs.append(str(_write_json(args.out, out)))
    print(f"processed {len(results)} clips -> {args.out}")


def _loss_outputs(out: Path, batch_loss, columns: dict, run: RunManifest) -> None:
    from .plots import plot_loss

    csv_path = out.parent / f"{out.name}.loss.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["batch", *columns])
        for i, row in enumerate(zip(*columns.values())):
            writer.writerow([i, *(f"{v:.10g}" for v in row)])
    svg_path = out.parent / f"{out.name}.loss.svg"
    x = np.asarray(batch_loss)
    width = min(50, len(x)) or 1
    smoothed = np.convolve(x, np.ones(width) / width, mode="valid") if len(x) else x
    plot_loss(x, svg_path, smoothed)
    run.outputs += [str(csv_path), str(svg_path)]


def cmd_train(args, run: RunManifest) -> None:
    from .synth_world import load_dataset

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "estimator":
        from .speed_model import TrainConfig, train

        clips = [c for c, _ in load_dataset(args.data)]
        labeled = []
        if args.labeled:
            labeled = [c for c, _ in load_dataset(args.labeled) if c.true_speed is not None]
            if args.n_labeled is not None:
                labeled = labeled[:args.n_labeled]
        config = _train_config(args, TrainConfig())
        model, history = train(clips, labeled, config)
        model.save(out)
        _loss_outputs(out, history.batch_loss, {"loss": history.batch_loss, "ssl_loss": history.ssl_loss,
                                                "sup_loss": history.sup_loss}, run)
        print(f"estimator: {history.n_batches} batches, final epoch loss {history.epoch_loss[-1]:.4f}")
    else:
        from .change_model import DETECTOR_TRAIN_CONFIG, harvested_windows, train_detector

        clips = [c for c, _ in load_dataset(args.data)]
        windows = harvested_windows(clips, args.window)
        config = _train_config(args, DETECTOR_TRAIN_CONFIG)
        model, losses = train_detector(windows, config)
        model.save(out)
        _loss_outputs(out, losses, {"loss": losses}, run)
        n_pos = sum(lbl for _, lbl in windows)
        print(f"detector: {len(windows)} windows ({n_pos} positive), final loss {np.mean(losses[-20:]):.4f}")
    run.outputs.insert(0, str(out))


def cmd_estimate(args, run: RunManifest) -> None:
    from .speed_model import EstimatorModel, predict_iterative

    model = EstimatorModel.load(args.model)
    rows = []
    for name, clip in _load_clips(args.input):
        trace = predict_iterative(model, clip.video, args.iterations)
        rows.append({"clip_id": clip.clip_id or name, **trace.to_json()})
    run.outputs.append(str(_write_json(args.out, {"clips": rows})))
    for r in rows[:20]:
        print(f"{r['clip_id']}: {r['final_speed']:.4f}")


def cmd_annotate(args, run: RunManifest) -> None:
    from .annotator import annotate
    from .change_model import DetectorModel
    from .speed_model import EstimatorModel

    estimator = EstimatorModel.load(args.estimator)
    detector = DetectorModel.load(args.detector)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = annotate(args.input, estimator, detector, args.iterations, out, args.window, args.stride,
                       args.buckets, args.export_dir, args.threads)
    run.outputs.append(str(out))
    if args.export_dir:
        run.outputs.append(str(args.export_dir))
    print(f"{len(records)} records -> {out}")


def cmd_eval(args, run: RunManifest) -> None:
    from .metrics_eval import detection_scores, evaluate_speeds, event_f1

    if args.kind == "speed":
        pred, gt = _load_speeds(args.pred), _load_speeds(args.gt)
        ids = sorted(set(pred) & set(gt))
        if not ids:
            raise ValueError("no clip ids in common between --pred and --gt")
        report = evaluate_speeds([pred[i] for i in ids], [gt[i] for i in ids], ids)
        print(report.table())
        result = report.to_json()
    elif args.kind == "changes":
        from .audio_analysis import middle_third_label

        profiles = _load_profiles(args.gt)
        data = json.loads(Path(args.pred).read_text())
        preds, truth = [], []
        for clip in data["clips"]:
            prof = profiles.get(clip["clip_id"])
            if prof is None:
                continue
            fps = clip["fps"]
            for w in clip.get("windows", []):
                start, length = w["start_frame"] / fps, (w["end_frame"] - w["start_frame"]) / fps
                label = middle_third_label(prof.change_times, start, length)
                preds.append(int(w.get("positive", w.get("label", 0))))
                truth.append(label)
        if not truth:
            raise ValueError("no windows could be matched to ground truth")
        report = detection_scores(preds, truth)
        print(f"accuracy {report.accuracy:.3f}  precision {report.precision:.3f}  "
              f"recall {report.recall:.3f}  F1 {report.f1:.3f}  (n={len(truth)})")
        result = report.to_json()
    else:
        profiles = _load_profiles(args.gt)
        data = json.loads(Path(args.pred).read_text())
        n_pred = n_true = n_match = 0
        for clip in data["clips"]:
            prof = profiles.get(clip["clip_id"])
            if prof is None or "events" not in clip:
                continue
            times = [e["time_s"] for e in clip["events"]]
            scores = event_f1(times, prof.change_times, args.tolerance)
            n_pred += len(times)
            n_true += len(prof.change_times)
            n_match += len(scores.matches)
        precision = n_match / n_pred if n_pred else (1.0 if n_true == 0 else 0.0)
        recall = n_match / n_true if n_true else (1.0 if n_pred == 0 else 0.0)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        result = {"precision": precision, "recall": recall, "f1": f1, "n_pred": n_pred, "n_true": n_true,
                  "n_matched": n_match, "tolerance_s": args.tolerance}
        print(f"event precision {precision:.3f}  recall {recall:.3f}  F1 {f1:.3f}")
    if args.out:
        run.outputs.append(str(_write_json(args.out, result)))


def cmd_blur_synth(args, run: RunManifest) -> None:
    from .media_core import Clip, make_blur_pair
    from .media_io import write_clip

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for name, clip in _load_clips(args.input):
        pair = make_blur_pair(clip.video, args.window, args.stride)
        stem = Path(name).name
        write_clip(Clip(pair.inputs, clip_id=f"{stem}_input"), out / f"{stem}_input.chrn")
        write_clip(Clip(pair.target, clip_id=f"{stem}_target"), out / f"{stem}_target.chrn")
        index.append({"clip_id": stem, "input": f"{stem}_input.chrn", "target": f"{stem}_target.chrn",
                      "stride": pair.stride, "window": args.window, "centers": pair.centers,
                      "n_input": len(pair.inputs), "n_target": len(pair.target)})
    _write_json(out / "pairs.json", index)
    run.outputs.append(str(out))
    print(f"{len(index)} blur pairs -> {out}")


# -- parser ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--run-manifest", default=None, help="where to write the run manifest")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="tempora", description="Playback-speed estimation toolkit")
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--speed-min", type=float, default=0.01)
    p.add_argument("--speed-max", type=float, default=1.0)
    p.add_argument("--change-fraction", type=float, default=0.0)
    p.add_argument("--n-changes", type=int, default=1)
    p.add_argument("--duration", type=float, default=3.2)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--sample-rate", type=float, default=16000.0)
    p.add_argument("--resolution", type=int, nargs=2, default=[48, 48], metavar=("W", "H"))
    p.add_argument("--noise", type=float, default=2e-4)
    p.add_argument("--out", required=True)
    _common(p)
    leaves["synth"] = (p, cmd_synth)

    p = sub.add_parser("detect-changes", help="find speed changes from audio, video or a flow baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("audio", "visual", "flow"), default="audio")
    p.add_argument("--model", default=None)
    p.add_argument("--threshold", type=float, default=1.25, help="flow baseline max/min ratio threshold")
    p.add_argument("--window", type=float, default=2.0)
    p.add_argument("--stride", type=float, default=None)
    p.add_argument("--plots", default=None, help="directory for spectrogram SVGs (audio method)")
    p.add_argument("--out", required=True)
    _common(p)
    leaves["detect-changes"] = (p, cmd_detect_changes)

    p = sub.add_parser("train", help="train an estimator or detector")
    tsub = p.add_subparsers(dest="kind", required=True)
    for kind in ("estimator", "detector"):
        q = tsub.add_parser(kind)
        q.add_argument("--data", required=True)
        q.add_argument("--labeled", default=None)
        q.add_argument("--n-labeled", type=int, default=None)
        q.add_argument("--epochs", type=int, default=None)
        q.add_argument("--batch-size", type=int, default=None)
        q.add_argument("--lr", type=float, default=None)
        q.add_argument("--lambda-sup", type=float, default=None)
        q.add_argument("--k-sampler", choices=("truncated_normal", "log_uniform"), default=None)
        q.add_argument("--window", type=float, default=2.0)
        q.add_argument("--out", required=True)
        _common(q)
        leaves[f"train {kind}"] = (q, cmd_train)

    p = sub.add_parser("estimate", help="estimate playback speed")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--out", required=True)
    _common(p)
    leaves["estimate"] = (p, cmd_estimate)

    p = sub.add_parser("annotate", help="segment, estimate and bucket footage")
    p.add_argument("--estimator", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--buckets", type=int, default=10)
    p.add_argument("--window", type=float, default=2.0)
    p.add_argument("--stride", type=float, default=None)
    p.add_argument("--export-dir", default=None)
    p.add_argument("--out", required=True)
    _common(p)
    leaves["annotate"] = (p, cmd_annotate)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    esub = p.add_subparsers(dest="kind", required=True)
    for kind in ("speed", "changes", "events"):
        q = esub.add_parser(kind)
        q.add_argument("--pred", required=True)
        q.add_argument("--gt", required=True)
        q.add_argument("--tolerance", type=float, default=0.1)
        q.add_argument("--out", default=None)
        _common(q)
        leaves[f"eval {kind}"] = (q, cmd_eval)

    p = sub.add_parser("blur-synth", help="make blurred low-fps input / sharp target pairs")
    p.add_argument("--input", required=True)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--out", required=True)
    _common(p)
    leaves["blur-synth"] = (p, cmd_blur_synth)
    return parser, leaves


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    name = args.command + (f" {args.kind}" if getattr(args, "kind", None) else "")
    leaf, handler = leaves[name]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = {k: v for k, v in vars(args).items()}
    run = RunManifest(name, config, _resolved_argv(leaf, args, name.split()))
    manifest_path = _manifest_path(args)
    try:
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        handler(args, run)
        run.status = "ok"
        code = 0
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        run.status = "error"
        run.error = f"{type(exc).__name__}: {exc}"
        print(f"tempora {name}: error: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        code = 1
    try:
        run.write(manifest_path)
    except OSError as exc:
        print(f"tempora: could not write run manifest {manifest_path}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
