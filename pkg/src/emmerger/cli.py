"""Command-line front end and detection file formats.

Detections file (UTF-8 CSV)::

    image_id,x1,y1,x2,y2,objectness,soft_iou

Corner-form pixel coordinates; the ``soft_iou`` column may be omitted, in
which case it defaults to ``objectness``. Ground-truth files use the same
layout with both scores at 1.0. Image sizes come from a sidecar::

    image_id,width,height

Exit status: 0 ok, 1 usage error, 2 bad data, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .baselines import greedy_nms
from .config import coerce_fields, read_key_values
from .em_merger import Detection, MergeConfig, MergedBox, ScoreSource, merge
from .geometry import Box, from_corner, to_corner
from .metrics import EvalReport, evaluate
from .synth import SceneSpec, generate_scene, load_scene_spec, simulate_detections

HEADER = ["image_id", "x1", "y1", "x2", "y2", "objectness", "soft_iou"]
DIMS_HEADER = ["image_id", "width", "height"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3

Record = Union[Detection, MergedBox]


class DataFormatError(ValueError):
    pass


class UsageError(Exception):
    pass


# -- file formats ----------------------------------------------------------


def _rows(path: Union[str, Path], header: list[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == header[0]:
                continue
            yield lineno, [c.strip() for c in row]


def load_detections(path: Union[str, Path]) -> dict[str, list[Detection]]:
    """Detections grouped by image id, in file order."""
    out: dict[str, list[Detection]] = {}
    for lineno, row in _rows(path, HEADER):
        if len(row) not in (6, 7):
            raise DataFormatError(f"{path}:{lineno}: expected 6 or 7 columns, got {len(row)}")
        try:
            x1, y1, x2, y2, obj = (float(v) for v in row[1:6])
            soft = float(row[6]) if len(row) == 7 and row[6] != "" else obj
            det = Detection(from_corner((x1, y1, x2, y2)), obj, soft)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        out.setdefault(row[0], []).append(det)
    return out


def load_image_dims(path: Union[str, Path]) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    for lineno, row in _rows(path, DIMS_HEADER):
        if len(row) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        try:
            w, h = float(row[1]), float(row[2])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        if not (w > 0 and h > 0):
            raise DataFormatError(f"{path}:{lineno}: image size must be positive")
        out[row[0]] = (w, h)
    return out


def _record_fields(rec: Record) -> tuple[Box, float, float]:
    if isinstance(rec, Detection):
        return rec.box, rec.objectness, rec.soft_iou
    box, conf = rec
    return box, conf, conf


def write_detections(path: Union[str, Path], results: Mapping[str, Sequence[Record]]) -> None:
    """Write detections or merged boxes; rows sorted by image id, then score descending.

    Merged boxes put their confidence in both score columns. Coordinates are
    written with full float precision, scores with 6 decimals.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for image_id in sorted(results):
            rows = [_record_fields(r) for r in results[image_id]]
            rows.sort(key=lambda r: -r[1])
            for box, obj, soft in rows:
                corners = [repr(float(v)) for v in to_corner(box)]
                writer.writerow([image_id, *corners, f"{obj:.6f}", f"{soft:.6f}"])


def write_image_dims(path: Union[str, Path], dims: Mapping[str, tuple[float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIMS_HEADER)
        for image_id in sorted(dims):
            w, h = dims[image_id]
            writer.writerow([image_id, repr(float(w)), repr(float(h))])


# -- per-image workers -------------------------------------------------------


def _merge_job(args):
    image_id, dets, w, h, config = args
    return image_id, merge(dets, w, h, config)


def _run_pool(fn, jobs: list, workers: int) -> dict:
    if workers <= 1 or len(jobs) <= 1:
        return dict(fn(j) for j in jobs)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return dict(pool.map(fn, jobs))


def merge_config_from(args: argparse.Namespace) -> MergeConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {}
    if args.config:
        values.update(coerce_fields(MergeConfig, read_key_values(args.config)))
    flags = {
        "score_source": args.score_source,
        "suppression_iou": args.suppression_iou,
        "objectness_floor": args.objectness_floor,
        "max_iterations": args.max_iter,
        "epsilon_em": args.epsilon,
        "k_override": args.k,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    return MergeConfig(**values)


def _image_sizes(args, image_ids) -> dict[str, tuple[float, float]]:
    if args.dims:
        dims = load_image_dims(args.dims)
        missing = [i for i in image_ids if i not in dims]
        if missing:
            raise DataFormatError(f"no image size for {missing[0]!r} in {args.dims}")
        return dims
    if args.image_size:
        w, h = args.image_size
        if not (w > 0 and h > 0):
            raise DataFormatError("image size must be positive")
        return {i: (w, h) for i in image_ids}
    raise UsageError("merge needs --dims or --image-size (or --k)")


def bench(spec: SceneSpec, seeds: Sequence[int], config: MergeConfig = MergeConfig()) -> dict[str, float]:
    """Time single-threaded merging of simulated scenes."""
    gt, w, h = generate_scene(spec)
    n_dets = n_out = 0
    elapsed = 0.0
    for seed in seeds:
        dets = simulate_detections(gt, spec, seed)
        start = time.perf_counter()
        out = merge(dets, w, h, config)
        elapsed += time.perf_counter() - start
        n_dets += len(dets)
        n_out += len(out)
    n = len(seeds)
    return {
        "scenes": n,
        "objects": len(gt),
        "detections": n_dets / n,
        "k_prime": n_out / n,
        "seconds_per_scene": elapsed / n,
        "fps": n / elapsed if elapsed > 0 else float("inf"),
        "dps": n_dets / elapsed if elapsed > 0 else float("inf"),
    }


# -- subcommands -------------------------------------------------------------


def _cmd_merge(args) -> int:
    dets = load_detections(args.detections)
    config = merge_config_from(args)
    if config.k_override is not None and not (args.dims or args.image_size):
        sizes = {i: (1.0, 1.0) for i in dets}
    else:
        sizes = _image_sizes(args, list(dets))
    jobs = [(i, d, *sizes[i], config) for i, d in dets.items()]
    write_detections(args.output, _run_pool(_merge_job, jobs, args.workers))
    return EXIT_OK


def _cmd_nms(args) -> int:
    dets = load_detections(args.detections)
    source = args.score_source or ScoreSource.OBJECTNESS
    kept = {i: greedy_nms(d, args.iou_thresh, source) for i, d in dets.items()}
    write_detections(args.output, kept)
    return EXIT_OK


def format_report(report: EvalReport, n_images: int) -> str:
    lines = [
        f"{'metric':<10}{'value':>12}",
        "-" * 22,
        *(f"{k:<10}{v:>12.6f}" for k, v in report.as_dict().items()),
        "",
        f"images={n_images}",
        *(f"{k}={v:.6f}" for k, v in report.as_dict().items()),
    ]
    return "\n".join(lines)


def _cmd_eval(args) -> int:
    preds = load_detections(args.predictions)
    gt = load_detections(args.ground_truth)
    source = args.score_source or ScoreSource.SOFT_IOU
    pred_boxes = {i: [(d.box, d.score(source)) for d in v] for i, v in preds.items()}
    gt_boxes = {i: [d.box for d in v] for i, v in gt.items()}
    report = evaluate(pred_boxes, gt_boxes)
    print(format_report(report, len(set(pred_boxes) | set(gt_boxes))))
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = load_scene_spec(args.spec) if args.spec else SceneSpec()
    gt_out, det_out, dims = {}, {}, {}
    for n in range(args.images):
        image_id = f"scene_{n:04d}"
        gt, w, h = generate_scene(spec, args.seed + n)
        gt_out[image_id] = [Detection(b, 1.0, 1.0) for b in gt]
        det_out[image_id] = simulate_detections(gt, spec, args.seed + n)
        dims[image_id] = (w, h)
    write_detections(args.gt_out, gt_out)
    write_detections(args.detections_out, det_out)
    if args.dims_out:
        write_image_dims(args.dims_out, dims)
    return EXIT_OK


def _cmd_bench(args) -> int:
    spec = load_scene_spec(args.spec) if args.spec else SceneSpec()
    stats = bench(spec, [args.seed + n for n in range(args.scenes)], merge_config_from(args))
    for key, value in stats.items():
        print(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_merge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with merge settings")
    p.add_argument("--score-source", choices=[s.value for s in ScoreSource])
    p.add_argument("--suppression-iou", type=float)
    p.add_argument("--objectness-floor", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k", type=int, help="fixed number of clusters instead of the image-size estimate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emmerger", description="EM merging of duplicate detections in packed scenes")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("merge", help="merge duplicate detections per image")
    p.add_argument("detections")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dims", help="image_id,width,height sidecar")
    p.add_argument("--image-size", nargs=2, type=float, metavar=("W", "H"))
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    _add_merge_flags(p)
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("nms", help="greedy non-maximum suppression")
    p.add_argument("detections")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--score-source", choices=[s.value for s in ScoreSource])
    p.set_defaults(func=_cmd_nms)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--score-source", choices=[s.value for s in ScoreSource],
                   help="prediction column used as confidence (default soft_iou)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic packed scene and simulated detections")
    p.add_argument("--spec", help="key = value scene file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=1)
    p.add_argument("--gt-out", required=True)
    p.add_argument("--detections-out", required=True)
    p.add_argument("--dims-out")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("bench", help="time merging on synthetic scenes")
    p.add_argument("--spec", help="key = value scene file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=5)
    _add_merge_flags(p)
    p.set_defaults(func=_cmd_bench)
    return parser


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", 1) < 1 or getattr(args, "images", 1) < 1 or getattr(args, "scenes", 1) < 1:
            raise UsageError("--workers, --images and --scenes must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except OSError as exc:
        print(f"emmerger: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"emmerger: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
