"""Raw RGB trace model: file format, validation, and the pre-processing filters.

A trace holds the per-frame mean R,G,B values of every facial region of
interest in one video. The on-disk format is a CSV with one mandatory
comment header line::

    # pulsekin-trace v1 fps=<float> subject=<id> video=<id> rois=<int> frames=<int>
    R_0,G_0,B_0,R_1,G_1,B_1,...          one line per frame

Values are decimal floats at 9 significant digits; files written by
:func:`write_trace` round-trip byte-identically through :func:`ingest_trace`.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt
from scipy.signal import detrend as _lsq_detrend

from .errors import (
    BandError,
    DataError,
    DegenerateSignalError,
    DurationError,
    FormatError,
)
from .fileio import write_bytes_atomic

TRACE_MAGIC = "# pulsekin-trace v1"
MIN_DURATION_S = 2.5

# Default heart-rate band, roughly 39-240 BPM.
DEFAULT_BAND_LOW_HZ = 0.65
DEFAULT_BAND_HIGH_HZ = 4.0

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def _fmt(x: float) -> str:
    """Canonical decimal encoding: 9 significant digits."""
    return f"{x:.9g}"


@dataclass(frozen=True)
class RgbTrace:
    """Per-video, per-ROI time series of mean color values."""

    subject_id: str
    video_id: str
    fps: float
    data: np.ndarray  # frames x rois x 3, float64

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise FormatError(f"trace data must be frames x rois x 3, got {data.shape}")
        if self.fps <= 0:
            raise FormatError(f"fps must be positive, got {self.fps}")
        if self.rois < 1:
            raise FormatError("trace needs at least one ROI")
        if self.frames < 2:
            raise FormatError("trace needs at least two frames")
        for name in ("subject_id", "video_id"):
            if not _ID_RE.match(getattr(self, name)):
                raise FormatError(f"{name} must match {_ID_RE.pattern}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def rois(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.frames / self.fps


@dataclass(frozen=True)
class PreprocSpec:
    """Which pre-processing filters to run around pulse extraction."""

    detrend: bool = True
    bandpass_low_hz: float = DEFAULT_BAND_LOW_HZ
    bandpass_high_hz: float = DEFAULT_BAND_HIGH_HZ
    normalize: bool = True

    def validate(self, fps: float) -> None:
        if not 0.0 < self.bandpass_low_hz < self.bandpass_high_hz < fps / 2.0:
            raise BandError(
                f"band [{self.bandpass_low_hz}, {self.bandpass_high_hz}] Hz invalid "
                f"for fps={fps}"
            )


def _parse_header(line: str) -> dict:
    if not line.startswith(TRACE_MAGIC + " "):
        raise FormatError(f"missing trace header, expected '{TRACE_MAGIC} ...'")
    fields = {}
    expected = ("fps", "subject", "video", "rois", "frames")
    tokens = line[len(TRACE_MAGIC) + 1 :].split()
    if len(tokens) != len(expected):
        raise FormatError(f"trace header needs fields {expected}, got {tokens}")
    for token, name in zip(tokens, expected):
        key, sep, value = token.partition("=")
        if key != name or not sep or not value:
            raise FormatError(f"bad header token {token!r}, expected {name}=<value>")
        fields[name] = value
    try:
        fields["fps"] = float(fields["fps"])
        fields["rois"] = int(fields["rois"])
        fields["frames"] = int(fields["frames"])
    except ValueError as exc:
        raise FormatError(f"non-numeric header field: {exc}") from exc
    return fields


def ingest_trace(path: str | Path, min_seconds: float = MIN_DURATION_S) -> RgbTrace:
    """Read and validate a trace file.

    Raises FormatError on a malformed header or grid, DataError naming the
    first non-finite cell, and DurationError when the video is shorter than
    ``min_seconds``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = _parse_header(lines[0])
    body = [ln for ln in lines[1:] if ln]
    if len(body) != head["frames"]:
        raise FormatError(
            f"{path}: header says frames={head['frames']} but file has {len(body)} rows"
        )
    if head["rois"] < 1 or head["frames"] < 2:
        raise FormatError(f"{path}: rois must be >= 1 and frames >= 2")
    try:
        data = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: unparseable cell ({exc})") from exc
    # loadtxt drops '#'-prefixed body lines as comments, so check both axes
    if data.shape != (head["frames"], 3 * head["rois"]):
        raise FormatError(
            f"{path}: expected {head['frames']} x {3 * head['rois']} cells, "
            f"got {data.shape[0]} x {data.shape[1]}"
        )
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        row, col = int(bad[0, 0]), int(bad[0, 1])
        raise DataError(
            f"{path}: non-finite value at frame {row}, column {col} "
            f"(ROI {col // 3}, channel {'RGB'[col % 3]})",
            row=row,
            col=col,
        )
    duration = head["frames"] / head["fps"] if head["fps"] > 0 else 0.0
    if head["fps"] <= 0:
        raise FormatError(f"{path}: fps must be positive")
    if duration < min_seconds:
        raise DurationError(
            f"{path}: trace lasts {duration:.3f} s, below the {min_seconds} s minimum"
        )
    return RgbTrace(
        subject_id=head["subject"],
        video_id=head["video"],
        fps=head["fps"],
        data=data.reshape(head["frames"], head["rois"], 3),
    )


def format_trace(trace: RgbTrace) -> str:
    """Render a trace in canonical on-disk form."""
    out = [
        f"{TRACE_MAGIC} fps={_fmt(trace.fps)} subject={trace.subject_id} "
        f"video={trace.video_id} rois={trace.rois} frames={trace.frames}"
    ]
    flat = trace.data.reshape(trace.frames, trace.rois * 3)
    for row in flat:
        out.append(",".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def write_trace(trace: RgbTrace, path: str | Path) -> None:
    write_bytes_atomic(path, format_trace(trace).encode("utf-8"))


def zscore(signal: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Standard normalization: zero mean, unit population standard deviation.

    Raises DegenerateSignalError on (near-)zero variance; the caller decides
    whether to drop or zero-fill the channel.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 2:
        raise ValueError("zscore needs at least 2 samples")
    std = x.std()
    if std <= tol or not np.isfinite(std):
        raise DegenerateSignalError("zero-variance signal cannot be normalized")
    return (x - x.mean()) / std


def detrend(signal: np.ndarray) -> np.ndarray:
    """Remove the least-squares linear trend; output has zero mean."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 3:
        raise ValueError("detrend needs at least 3 samples")
    return _lsq_detrend(x, type="linear")


def detrend_keep_mean(signal: np.ndarray) -> np.ndarray:
    """Linear trend removal that preserves the DC level.

    Used on raw color traces ahead of methods that normalize by the running
    mean and therefore need a positive baseline.
    """
    x = np.asarray(signal, dtype=np.float64)
    return detrend(x) + x.mean()


def bandpass(
    signal: np.ndarray,
    fps: float,
    low: float = DEFAULT_BAND_LOW_HZ,
    high: float = DEFAULT_BAND_HIGH_HZ,
) -> np.ndarray:
    """Zero-phase band-pass filter (4th-order IIR applied forward-backward).

    Raises BandError unless 0 < low < high < fps/2.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not 0.0 < low < high < fps / 2.0:
        raise BandError(f"band [{low}, {high}] Hz invalid for fps={fps}")
    if x.size < 12:
        raise ValueError("bandpass needs at least 12 samples")
    b, a = butter(2, [low, high], btype="bandpass", fs=fps)
    padlen = min(3 * max(len(a), len(b)), x.size - 1)
    return filtfilt(b, a, x, padlen=padlen)
