"""Trace-file writing and validation, implemented independently.

This module re-states the trace CSV contract on the producer side so that
format drift between the two packages is caught by the shared conformance
fixtures, not in production. Validation reports use stable string codes
("format", "data", "duration") that mirror the consumer's error taxonomy.
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACE_MAGIC = "# pulsekin-trace v1"
MIN_DURATION_S = 2.5

CODE_FORMAT = "format"
CODE_DATA = "data"
CODE_DURATION = "duration"

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")
_HEADER_FIELDS = ("fps", "subject", "video", "rois", "frames")


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def format_trace_csv(
    fps: float, subject: str, video: str, data: np.ndarray
) -> str:
    """Render frames x rois x 3 mean colors in canonical trace form."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"data must be frames x rois x 3, got {data.shape}")
    frames, rois, _ = data.shape
    for name, value in (("subject", subject), ("video", video)):
        if not _ID_RE.match(value):
            raise ValueError(f"{name} id {value!r} must match {_ID_RE.pattern}")
    lines = [
        f"{TRACE_MAGIC} fps={_fmt(fps)} subject={subject} "
        f"video={video} rois={rois} frames={frames}"
    ]
    flat = data.reshape(frames, rois * 3)
    for row in flat:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_trace_csv(
    path: str | Path, fps: float, subject: str, video: str, data: np.ndarray
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = format_trace_csv(fps, subject, video, data)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class TraceValidation:
    ok: bool
    code: str | None = None
    message: str = ""
    fps: float = 0.0
    rois: int = 0
    frames: int = 0
    duration_s: float = 0.0
    roi_variance: list[float] = field(default_factory=list)
    degenerate_rois: list[int] = field(default_factory=list)

    def summary(self) -> str:
        if not self.ok:
            return f"REJECT [{self.code}] {self.message}"
        flagged = f", {len(self.degenerate_rois)} prospective degenerate" if self.degenerate_rois else ""
        return (
            f"OK fps={self.fps:g} rois={self.rois} frames={self.frames} "
            f"duration={self.duration_s:.2f}s{flagged}"
        )


def _reject(code: str, message: str) -> TraceValidation:
    return TraceValidation(ok=False, code=code, message=message)


def validate_trace(path: str | Path, min_seconds: float = MIN_DURATION_S) -> TraceValidation:
    """Re-run the consumer's validation rules; report instead of raising.

    The rule order matches the consumer exactly so that multi-defect files
    yield the same error code on both sides.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        return _reject(CODE_FORMAT, f"unreadable file: {exc}")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return _reject(CODE_FORMAT, "empty file")

    header = lines[0]
    if not header.startswith(TRACE_MAGIC + " "):
        return _reject(CODE_FORMAT, f"missing header '{TRACE_MAGIC} ...'")
    tokens = header[len(TRACE_MAGIC) + 1 :].split()
    if len(tokens) != len(_HEADER_FIELDS):
        return _reject(CODE_FORMAT, f"header needs fields {_HEADER_FIELDS}")
    fields_raw: dict[str, str] = {}
    for token, name in zip(tokens, _HEADER_FIELDS):
        key, sep, value = token.partition("=")
        if key != name or not sep or not value:
            return _reject(CODE_FORMAT, f"bad header token {token!r}")
        fields_raw[name] = value
    try:
        fps = float(fields_raw["fps"])
        rois = int(fields_raw["rois"])
        frames = int(fields_raw["frames"])
    except ValueError as exc:
        return _reject(CODE_FORMAT, f"non-numeric header field: {exc}")

    body = [ln for ln in lines[1:] if ln]
    if len(body) != frames:
        return _reject(CODE_FORMAT, f"header says frames={frames} but file has {len(body)} rows")
    if rois < 1 or frames < 2:
        return _reject(CODE_FORMAT, "rois must be >= 1 and frames >= 2")

    values = np.empty((frames, 3 * rois))
    for i, line in enumerate(body):
        cells = line.split(",")
        if len(cells) != 3 * rois:
            return _reject(
                CODE_FORMAT, f"expected {3 * rois} columns, got {len(cells)} in row {i}"
            )
        try:
            values[i] = [float(c) for c in cells]
        except ValueError as exc:
            return _reject(CODE_FORMAT, f"unparseable cell in row {i}: {exc}")
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = int(bad[0, 0]), int(bad[0, 1])
        return _reject(
            CODE_DATA,
            f"non-finite value at frame {row}, column {col} "
            f"(ROI {col // 3}, channel {'RGB'[col % 3]})",
        )
    if fps <= 0:
        return _reject(CODE_FORMAT, "fps must be positive")
    duration = frames / fps
    if duration < min_seconds:
        return _reject(
            CODE_DURATION,
            f"trace lasts {duration:.3f} s, below the {min_seconds} s minimum",
        )
    for name in ("subject", "video"):
        if not _ID_RE.match(fields_raw[name]):
            return _reject(CODE_FORMAT, f"{name} id must match {_ID_RE.pattern}")

    per_roi = values.reshape(frames, rois, 3)
    temporal_var = per_roi.var(axis=0)  # (rois, 3): variation over time
    variance = temporal_var.mean(axis=1)
    degenerate = [int(i) for i in np.flatnonzero(temporal_var.max(axis=1) <= 1e-12)]
    return TraceValidation(
        ok=True,
        fps=fps,
        rois=rois,
        frames=frames,
        duration_s=duration,
        roi_variance=[float(v) for v in variance],
        degenerate_rois=degenerate,
    )
