"""video2trace: facial video in, pulsekin trace CSV out."""

from __future__ import annotations

import argparse
import sys

from .detect import FaceError
from .grid import RoiGrid
from .ingest import video_to_trace
from .traceio import validate_trace


def _parse_grid(value: str) -> RoiGrid:
    try:
        rows, cols = (int(v) for v in value.lower().split("x"))
        return RoiGrid(rows=rows, cols=cols)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {value!r}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="video2trace",
        description="Convert a facial video into a pulsekin trace file",
    )
    parser.add_argument("video", help="input video, or a trace file with --validate")
    parser.add_argument("--out", help="output trace CSV path")
    parser.add_argument("--grid", type=_parse_grid, default=RoiGrid(),
                        help="ROI grid, rows x cols with 100 cells (default 10x10)")
    parser.add_argument("--min-seconds", type=float, default=2.5)
    parser.add_argument("--detector", choices=("skin", "haar", "full"), default="skin")
    parser.add_argument("--cascade", help="Haar cascade XML (with --detector haar)")
    parser.add_argument("--fps-override", type=float, default=None)
    parser.add_argument("--subject", default=None)
    parser.add_argument("--video-id", default=None)
    parser.add_argument("--validate", action="store_true",
                        help="validate an existing trace file instead of ingesting")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.validate:
        report = validate_trace(args.video, min_seconds=args.min_seconds)
        print(report.summary())
        if report.ok and report.degenerate_rois:
            print(f"prospective degenerate ROIs: {report.degenerate_rois}")
        return 0 if report.ok else 1
    if not args.out:
        print("error: --out is required when ingesting", file=sys.stderr)
        return 2
    try:
        report = video_to_trace(
            args.video,
            args.out,
            fps_override=args.fps_override,
            grid=args.grid,
            min_seconds=args.min_seconds,
            detector=args.detector,
            cascade=args.cascade,
            subject_id=args.subject,
            video_id=args.video_id,
        )
    except (FaceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    note = " (FLAGGED: below minimum duration)" if report.flagged_short else ""
    print(
        f"{report.out_path}: {report.frames} frames at {report.fps:g} fps "
        f"({report.duration_s:.2f}s), {report.held_frames} held{note}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
