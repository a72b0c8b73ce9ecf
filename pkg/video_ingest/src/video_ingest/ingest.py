"""Video decoding to trace files: detect, align, grid, per-cell mean RGB."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np

from .detect import FaceError, aligned_crop, make_detector
from .grid import RoiGrid
from .traceio import MIN_DURATION_S, write_trace_csv

MAX_MISS_FRACTION = 0.10


@dataclass
class IngestReport:
    video: str
    frames: int
    fps: float
    duration_s: float
    held_frames: int
    flagged_short: bool
    out_path: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _sanitize_id(value: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9._-]", "_", value)
    return cleaned or "unknown"


def _decode(video_path: Path, fps_override: float | None) -> tuple[list[np.ndarray], float]:
    cap = cv2.VideoCapture(str(video_path))
    if not cap.isOpened():
        raise OSError(f"cannot open video {video_path}")
    fps = fps_override or cap.get(cv2.CAP_PROP_FPS)
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame)
    cap.release()
    if not frames:
        raise OSError(f"no decodable frames in {video_path}")
    if not fps or fps <= 0:
        raise OSError(f"video reports no frame rate; pass --fps-override ({video_path})")
    return frames, float(fps)


def video_to_trace(
    video_path: str | Path,
    out_path: str | Path,
    fps_override: float | None = None,
    grid: RoiGrid | None = None,
    min_seconds: float = MIN_DURATION_S,
    detector: str = "skin",
    cascade: str | None = None,
    crop_size: int = 200,
    subject_id: str | None = None,
    video_id: str | None = None,
    write_report: bool = True,
) -> IngestReport:
    """Convert one facial video into a trace CSV.

    Per frame: detect the face, fall back to the previous frame's box on a
    miss (leading misses use the first detection), normalize the crop, and
    record each grid cell's mean R,G,B. Raises FaceError when more than 10%
    of frames have no detectable face. Videos shorter than ``min_seconds``
    are still written but flagged; the downstream pipeline rejects them.
    """
    video_path = Path(video_path)
    out_path = Path(out_path)
    grid = grid or RoiGrid()
    detect = make_detector(detector, cascade)
    frames, fps = _decode(video_path, fps_override)

    boxes: list[tuple[int, int, int, int] | None] = [detect(f) for f in frames]
    misses = sum(1 for b in boxes if b is None)
    if misses > MAX_MISS_FRACTION * len(frames):
        raise FaceError(
            f"{video_path}: face missing in {misses}/{len(frames)} frames "
            f"(> {MAX_MISS_FRACTION:.0%})"
        )
    first = next(b for b in boxes if b is not None)
    held = 0
    last = first
    data = np.empty((len(frames), grid.rows * grid.cols, 3))
    for i, (frame, box) in enumerate(zip(frames, boxes)):
        if box is None:
            box = last
            held += 1
        last = box
        crop = aligned_crop(frame, box, size=crop_size)
        data[i] = grid.mean_rgb(crop)

    duration = len(frames) / fps
    vid = _sanitize_id(video_id or video_path.stem)
    sub = _sanitize_id(subject_id or video_path.stem)
    write_trace_csv(out_path, fps, sub, vid, data)
    report = IngestReport(
        video=str(video_path),
        frames=len(frames),
        fps=fps,
        duration_s=duration,
        held_frames=held,
        flagged_short=duration < min_seconds,
        out_path=str(out_path),
    )
    if write_report:
        Path(str(out_path) + ".ingest.json").write_text(report.to_json(), encoding="utf-8")
    return report
