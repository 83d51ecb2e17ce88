"""Command-line front end: replay, overlay, map, bench, eval, augment, split.

Exit codes: 0 success, 1 usage error, 2 runtime error. All outputs land under
--out with fixed names (detections.jsonl, report.json, grid.geojson, grid.csv,
overlay/frame_%06d.ppm, overlay/layers.jsonl, coverage.jsonl, eval.json,
split.json) and are written atomically.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

from . import augment as aug
from . import bench as benchmod
from . import dataset as datasetmod
from .detector import DetectorError, ReplayBackend, RunnerBackend, RunnerConfig
from .evaluation import (
    FrameSetMismatchError,
    evaluate,
    ground_truth_from_frames,
    load_ground_truth,
    write_report as write_eval_report,
)
from .geomap import write_csv, write_geojson
from .ingest import IngestError, iter_log_frames, load_manifest, parse_gps_track
from .ioutil import atomic_write_text
from .pipeline import PipelineConfig, run_pipeline


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit code 1, not argparse's 2
        raise _UsageError(message)


def _parse_grid_dims(text: str) -> tuple[int, int]:
    try:
        cols, rows = text.lower().split("x")
        dims = (int(cols), int(rows))
    except ValueError:
        raise _UsageError(f"--grid expects COLSxROWS, got {text!r}") from None
    if dims[0] < 1 or dims[1] < 1:
        raise _UsageError(f"--grid dimensions must be >= 1, got {text!r}")
    return dims


def build_parser() -> _Parser:
    parser = _Parser(prog="weedmap", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common_io(p: _Parser, runner: bool = False) -> None:
        p.add_argument("--manifest", required=True, help="frame manifest JSON")
        if runner:
            group = p.add_mutually_exclusive_group(required=True)
            group.add_argument("--detections", help="detection log for replay")
            group.add_argument("--model-runner", help="command line of an external runner")
        else:
            p.add_argument("--detections", required=True, help="detection log for replay")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--confidence", type=float, default=0.70)
        p.add_argument("--queue-capacity", type=int, default=16)

    replay = sub.add_parser("replay", help="full pipeline pass: detect, overlay, map")
    add_common_io(replay, runner=True)
    replay.add_argument("--gps", help="GPS track CSV; enables the density grid outputs")
    replay.add_argument("--cell-size", type=float, default=1.0)
    replay.add_argument("--grid", help="per-frame coverage grid as COLSxROWS")
    replay.add_argument("--seed", type=int, default=0)
    replay.set_defaults(func=_cmd_replay)

    overlay = sub.add_parser("overlay", help="render overlay frames from a detection log")
    add_common_io(overlay)
    overlay.add_argument("--grid", help="per-frame coverage grid as COLSxROWS")
    overlay.set_defaults(func=_cmd_overlay)

    geomap = sub.add_parser("map", help="geolocated density grid from log + GPS track")
    add_common_io(geomap)
    geomap.add_argument("--gps", required=True)
    geomap.add_argument("--cell-size", type=float, default=1.0)
    geomap.set_defaults(func=_cmd_map)

    bench = sub.add_parser("bench", help="timed repeated pipeline passes")
    add_common_io(bench, runner=True)
    bench.add_argument("--runs", type=int, default=3)
    bench.set_defaults(func=_cmd_bench)

    evalp = sub.add_parser("eval", help="precision/recall/AP/mAP against ground truth")
    evalp.add_argument("--detections", required=True)
    evalp.add_argument("--gt", required=True, help="ground-truth log (conf optional)")
    evalp.add_argument("--manifest", help="manifest aligning both streams")
    evalp.add_argument("--iou", type=float, default=0.5)
    evalp.add_argument("--out", required=True)
    evalp.set_defaults(func=_cmd_eval)

    augment = sub.add_parser("augment", help="expand a dataset with seeded augmentations")
    augment.add_argument("--manifest", required=True, help="dataset manifest JSON")
    augment.add_argument("--out", required=True)
    augment.add_argument("--seed", type=int, default=0)
    augment.add_argument("--multiplier-train", type=int, default=12)
    augment.add_argument("--multiplier-eval", type=int, default=4)
    augment.set_defaults(func=_cmd_augment)

    split = sub.add_parser("split", help="assign dataset ids to train/val/test")
    split.add_argument("--manifest", required=True, help="dataset manifest JSON")
    split.add_argument("--out", required=True)
    split.add_argument("--seed", type=int, default=0)
    split.set_defaults(func=_cmd_split)

    return parser


def _make_backend(args):
    if getattr(args, "model_runner", None):
        config = RunnerConfig(
            command=tuple(shlex.split(args.model_runner)),
            confidence_floor=0.0,
            io_timeout_ms=30_000,
        )
        return RunnerBackend(config)
    manifest = load_manifest(args.manifest)
    return ReplayBackend.from_log(args.detections, manifest)


def _pipeline_config(args, coverage: Optional[str] = None, overlays: bool = True) -> PipelineConfig:
    return PipelineConfig(
        confidence=args.confidence,
        cell_size_m=getattr(args, "cell_size", 1.0),
        coverage_dims=_parse_grid_dims(coverage) if coverage else None,
        queue_capacity=args.queue_capacity,
        write_overlays=overlays,
    )


def _write_run_report(out_dir: Path, result, elapsed_s: float, confidence: float) -> None:
    fps = result.frame_count / elapsed_s if elapsed_s > 0 else 0.0
    doc = {
        "frames": result.frame_count,
        "detections": result.detection_count,
        "frames_with_detections": result.frames_with_detections,
        "frames_outside_track": result.frames_outside_track,
        "confidence": confidence,
        "elapsed_s": elapsed_s,
        "fps": fps,
    }
    atomic_write_text(out_dir / "report.json", json.dumps(doc, separators=(",", ":")) + "\n")


def _run_and_report(args, coverage: Optional[str], overlays: bool, with_gps: bool) -> int:
    manifest = load_manifest(args.manifest)
    backend = _make_backend(args)
    track = parse_gps_track(args.gps) if with_gps and getattr(args, "gps", None) else None
    out_dir = Path(args.out)
    config = _pipeline_config(args, coverage=coverage, overlays=overlays)
    started = time.perf_counter()
    try:
        result = run_pipeline(
            manifest,
            backend,
            config,
            out_dir=out_dir,
            image_root=Path(args.manifest).parent,
            track=track,
        )
    finally:
        if hasattr(backend, "close"):
            backend.close()
    elapsed = time.perf_counter() - started
    if result.grid is not None:
        write_geojson(result.grid, out_dir / "grid.geojson")
        write_csv(result.grid, out_dir / "grid.csv")
    _write_run_report(out_dir, result, elapsed, args.confidence)
    print(
        f"{result.frame_count} frames, {result.detection_count} detections "
        f"({result.frames_with_detections} frames with detections) in {elapsed:.2f}s"
    )
    return 0


def _cmd_replay(args) -> int:
    return _run_and_report(args, coverage=args.grid, overlays=True, with_gps=True)


def _cmd_overlay(args) -> int:
    return _run_and_report(args, coverage=args.grid, overlays=True, with_gps=False)


def _cmd_map(args) -> int:
    return _run_and_report(args, coverage=None, overlays=False, with_gps=True)


def _cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    backend = _make_backend(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _pipeline_config(args)
    image_root = Path(args.manifest).parent
    last_result = []

    try:
        with tempfile.TemporaryDirectory(prefix="weedmap-bench-") as scratch:

            def one_pass() -> None:
                last_result.clear()
                last_result.append(
                    run_pipeline(manifest, backend, config, Path(scratch), image_root)
                )

            runs = benchmod.time_runs(one_pass, repeats=args.runs)
    finally:
        if hasattr(backend, "close"):
            backend.close()

    result = last_result[0]
    label = args.model_runner if args.model_runner else Path(args.detections).name
    report = benchmod.BenchmarkReport(
        model_label=label,
        runs_s=tuple(runs),
        frame_count=result.frame_count,
        frames_with_detections=result.frames_with_detections,
        confidence=args.confidence,
    )
    benchmod.write_report(report, out_dir / "report.json")
    print(
        f"{label}: mean {benchmod.present_2dp(report.mean_s):.2f}s over {args.runs} runs, "
        f"{report.fps:.1f} fps, {report.frames_with_detections}/{report.frame_count} frames with detections"
    )
    return 0


def _cmd_eval(args) -> int:
    if args.manifest:
        manifest = load_manifest(args.manifest)
        from .ingest import parse_detection_log

        preds = parse_detection_log(args.detections, manifest)
        gts = load_ground_truth(args.gt, manifest)
    else:
        preds = [frame for _no, frame in iter_log_frames(args.detections)]
        gts = ground_truth_from_frames([frame for _no, frame in iter_log_frames(args.gt)])
    report = evaluate(preds, gts, iou_threshold=args.iou)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_eval_report(report, out_dir / "eval.json")
    print(f"mAP@{args.iou:g}: {report.map50:.4f}")
    return 0


def _read_dataset_ids(manifest_path: str) -> list[str]:
    with open(manifest_path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    return [str(entry["id"]) for entry in doc["images"]]


def _cmd_split(args) -> int:
    ids = _read_dataset_ids(args.manifest)
    plan = aug.split_dataset(ids, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "split.json", json.dumps(plan.to_json_dict(), separators=(",", ":")) + "\n")
    counts = plan.counts()
    print(f"{len(ids)} ids -> train {counts['train']} / val {counts['val']} / test {counts['test']}")
    return 0


def _cmd_augment(args) -> int:
    items = datasetmod.load_dataset(args.manifest)
    if any(item.split is None for item in items):
        plan = aug.split_dataset([item.image.id for item in items], seed=args.seed)
        items = [
            datasetmod.DatasetItem(image=item.image, split=plan.assignment[item.image.id])
            for item in items
        ]
    spec = aug.AugmentationSpec(seed=args.seed)
    multipliers = {
        "train": args.multiplier_train,
        "val": args.multiplier_eval,
        "test": args.multiplier_eval,
    }
    expanded = aug.generate_augmented_dataset(items, spec, multipliers)
    datasetmod.save_dataset(expanded, Path(args.out))
    per_split = {}
    for item in expanded:
        per_split[item.split] = per_split.get(item.split, 0) + 1
    print(
        f"{len(items)} -> {len(expanded)} images "
        + " ".join(f"{k}={v}" for k, v in sorted(per_split.items()))
    )
    return 0


def parse_and_dispatch(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help exits 0
        return 0 if not exc.code else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IngestError, DetectorError, FrameSetMismatchError, benchmod.BenchmarkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
