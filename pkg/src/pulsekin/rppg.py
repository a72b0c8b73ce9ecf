"""Pulse recovery from RGB traces: GREEN, OMIT, CHROM, LGI, and POS.

Each method maps one ROI's mean-color time series to a 1-D blood-volume
pulse estimate. The shared pipeline is: linear trend removal on the raw
colors (DC preserved, since CHROM/POS normalize by the running mean), the
method itself, a heart-rate band-pass, and per-channel standardization.

`extract_all` applies a method to every ROI, resamples to the canonical
50 Hz rate, center-crops to the canonical 125-sample window, and z-scores
each channel. Channels whose pulse estimate degenerates to a constant are
zero-filled and flagged rather than dropped, keeping the channel count
fixed for the downstream network.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.signal import welch
from scipy.signal.windows import hann

from .errors import (
    DataError,
    DegenerateSignalError,
    ExtractionError,
    FormatError,
    WindowError,
)
from .fileio import write_bytes_atomic
from .trace import PreprocSpec, RgbTrace, bandpass, detrend_keep_mean, zscore

GREEN, OMIT, CHROM, LGI, POS = "green", "omit", "chrom", "lgi", "pos"
METHODS = (GREEN, OMIT, CHROM, LGI, POS)

CANONICAL_FPS = 50.0
CANONICAL_LEN = 125  # 2.5 s at 50 Hz, the shortest admissible video

RPPG_MAGIC = "# pulsekin-rppg v1"

_TINY = 1e-12


def _fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass(frozen=True)
class MethodSpec:
    """Method choice plus windowing for the windowed methods (CHROM, POS)."""

    method: str
    window_s: float = 1.6
    overlap: float = 0.5
    chrom_fixed_coeffs: bool = False  # 0.77/-0.51 fixed-skin-tone variant

    def validate(self, fps: float) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.window_s * fps < 16:
            raise ValueError(f"window {self.window_s} s is under 16 samples at {fps} fps")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")


@dataclass(frozen=True)
class RppgSignal:
    """Multi-channel pulse signal: C channels x W samples, z-scored."""

    subject_id: str
    video_id: str
    method: str
    data: np.ndarray
    fps: float = CANONICAL_FPS
    degenerate: tuple[int, ...] = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise FormatError(f"signal data must be C x W, got shape {data.shape}")
        if self.method not in METHODS:
            raise FormatError(f"unknown method {self.method!r}")
        for c in range(data.shape[0]):
            ch = data[c]
            if not np.any(ch):
                continue
            if abs(ch.mean()) > 1e-6 or abs(ch.std() - 1.0) > 1e-6:
                raise FormatError(
                    f"channel {c} is neither z-scored nor an all-zero degenerate "
                    f"channel (mean={ch.mean():.2e}, std={ch.std():.6f})"
                )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


def _preprocessed_rgb(trace: RgbTrace, roi: int, preproc: PreprocSpec) -> np.ndarray:
    if not 0 <= roi < trace.rois:
        raise IndexError(f"roi {roi} out of range for {trace.rois} ROIs")
    rgb = trace.data[:, roi, :].astype(np.float64)
    if preproc.detrend:
        rgb = np.column_stack([detrend_keep_mean(rgb[:, c]) for c in range(3)])
    return rgb


def _finalize(sig: np.ndarray, fps: float, preproc: PreprocSpec) -> np.ndarray:
    """Band-pass and (optionally) z-score; degenerate output becomes zeros."""
    if sig.std() <= _TINY:
        return np.zeros_like(sig)
    out = bandpass(sig, fps, preproc.bandpass_low_hz, preproc.bandpass_high_hz)
    if not preproc.normalize:
        return out
    try:
        return zscore(out)
    except DegenerateSignalError:
        return np.zeros_like(out)


def _inband_energy(x: np.ndarray, fps: float, low: float, high: float) -> float:
    x = x - x.mean()
    freqs = np.fft.rfftfreq(x.size, 1.0 / fps)
    power = np.abs(np.fft.rfft(x)) ** 2
    mask = (freqs >= low) & (freqs <= high)
    return float(power[mask].sum())


def _overlap_add(
    n_frames: int,
    fps: float,
    spec: MethodSpec,
    window_fn: Callable[[int, int], np.ndarray | None],
) -> np.ndarray:
    """Hann-weighted overlap-add over sliding windows.

    ``window_fn(start, length)`` returns the window's pulse segment or None
    for a degenerate window, which then contributes zeros.
    """
    win = int(round(spec.window_s * fps))
    if win > n_frames:
        raise WindowError(f"window of {win} samples exceeds trace of {n_frames}")
    hop = max(1, int(round(win * (1.0 - spec.overlap))))
    starts = list(range(0, n_frames - win + 1, hop))
    if starts[-1] != n_frames - win:
        starts.append(n_frames - win)  # final full window anchored at the tail
    taper = hann(win, sym=False)
    out = np.zeros(n_frames)
    weight = np.zeros(n_frames)
    for s in starts:
        seg = window_fn(s, win)
        if seg is not None:
            out[s : s + win] += taper * seg
        weight[s : s + win] += taper
    nonzero = weight > _TINY
    out[nonzero] /= weight[nonzero]
    return out


def _normalized_window(rgb: np.ndarray, start: int, win: int) -> np.ndarray | None:
    seg = rgb[start : start + win]
    mean = seg.mean(axis=0)
    if np.any(np.abs(mean) <= _TINY):
        return None
    return seg / mean


def _chrom_core(rgb: np.ndarray, fps: float, spec: MethodSpec) -> np.ndarray:
    def one_window(start: int, win: int) -> np.ndarray | None:
        norm = _normalized_window(rgb, start, win)
        if norm is None:
            return None
        r, g, b = norm[:, 0], norm[:, 1], norm[:, 2]
        if spec.chrom_fixed_coeffs:
            x = 0.77 * r - 0.51 * g
            y = 0.77 * r + 0.51 * g - 0.77 * b
        else:
            x = 3.0 * r - 2.0 * g
            y = 1.5 * r + g - 1.5 * b
        sy = y.std()
        if sy <= _TINY:
            return None
        s = x - (x.std() / sy) * y
        return s - s.mean()

    return _overlap_add(rgb.shape[0], fps, spec, one_window)


_POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])


def _pos_core(rgb: np.ndarray, fps: float, spec: MethodSpec) -> np.ndarray:
    def one_window(start: int, win: int) -> np.ndarray | None:
        norm = _normalized_window(rgb, start, win)
        if norm is None:
            return None
        s1, s2 = _POS_PROJECTION @ norm.T
        std2 = s2.std()
        if std2 <= _TINY:
            return None
        h = s1 + (s1.std() / std2) * s2
        return h - h.mean()

    return _overlap_add(rgb.shape[0], fps, spec, one_window)


def _lgi_core(rgb: np.ndarray, fps: float, low: float, high: float) -> np.ndarray:
    x = rgb.T  # 3 x frames
    centered = x - x.mean(axis=1, keepdims=True)
    u, singular, _ = np.linalg.svd(centered, full_matrices=False)
    if singular[0] <= 1e-9 * max(1.0, float(np.abs(x).max())):
        raise DegenerateSignalError("constant trace has no invariant-space projection")
    u1 = u[:, 0]
    projected = centered - np.outer(u1, u1 @ centered)
    energies = [_inband_energy(row, fps, low, high) for row in projected]
    return projected[int(np.argmax(energies))]


def _omit_core(rgb: np.ndarray, fps: float, low: float, high: float) -> np.ndarray:
    x = rgb.T  # 3 x frames
    if x.std() <= 1e-9 * max(1.0, float(np.abs(x).max())):
        raise DegenerateSignalError("constant trace has no orthogonal component")
    q, _ = np.linalg.qr(x)
    q1 = q[:, 0]
    residual = x - np.outer(q1, q1 @ x)
    energies = [_inband_energy(row, fps, low, high) for row in residual]
    return residual[int(np.argmax(energies))]


def extract_green(
    trace: RgbTrace, roi: int, preproc: PreprocSpec | None = None
) -> np.ndarray:
    """Green-channel pulse: the G column of the ROI, preprocessed.

    A constant G column yields an all-zero (flagged degenerate) channel.
    """
    preproc = preproc or PreprocSpec()
    preproc.validate(trace.fps)
    rgb = _preprocessed_rgb(trace, roi, preproc)
    return _finalize(rgb[:, 1], trace.fps, preproc)


def extract_chrom(
    trace: RgbTrace,
    roi: int,
    spec: MethodSpec | None = None,
    preproc: PreprocSpec | None = None,
) -> np.ndarray:
    """Chrominance-combination pulse with Hann overlap-add windowing.

    Per window of temporally normalized channels: X = 3Rn - 2Gn,
    Y = 1.5Rn + Gn - 1.5Bn, S = X - (sigma_X / sigma_Y) Y. Pure intensity
    variation (R = G = B) cancels exactly.
    """
    spec = spec or MethodSpec(CHROM)
    preproc = preproc or PreprocSpec()
    spec.validate(trace.fps)
    preproc.validate(trace.fps)
    rgb = _preprocessed_rgb(trace, roi, preproc)
    return _finalize(_chrom_core(rgb, trace.fps, spec), trace.fps, preproc)


def extract_pos(
    trace: RgbTrace,
    roi: int,
    spec: MethodSpec | None = None,
    preproc: PreprocSpec | None = None,
) -> np.ndarray:
    """Plane-orthogonal-to-skin pulse with Hann overlap-add windowing.

    Per window: S = P Cn with P = [[0,1,-1],[-2,1,1]] on temporally
    normalized channels, h = S1 + (sigma_S1 / sigma_S2) S2, mean-removed.
    """
    spec = spec or MethodSpec(POS)
    preproc = preproc or PreprocSpec()
    spec.validate(trace.fps)
    preproc.validate(trace.fps)
    rgb = _preprocessed_rgb(trace, roi, preproc)
    return _finalize(_pos_core(rgb, trace.fps, spec), trace.fps, preproc)


def extract_lgi(
    trace: RgbTrace, roi: int, preproc: PreprocSpec | None = None
) -> np.ndarray:
    """Invariant-space pulse: project out the leading SVD direction of the
    mean-centered color matrix, keep the component with the highest
    heart-band energy. Raises DegenerateSignalError on a constant trace.
    """
    preproc = preproc or PreprocSpec()
    preproc.validate(trace.fps)
    rgb = _preprocessed_rgb(trace, roi, preproc)
    sig = _lgi_core(rgb, trace.fps, preproc.bandpass_low_hz, preproc.bandpass_high_hz)
    return _finalize(sig, trace.fps, preproc)


def extract_omit(
    trace: RgbTrace, roi: int, preproc: PreprocSpec | None = None
) -> np.ndarray:
    """Orthogonal-matrix pulse: QR-factorize the color matrix, remove the
    leading basis direction, keep the row with the highest heart-band
    energy. Raises DegenerateSignalError on a constant trace.
    """
    preproc = preproc or PreprocSpec()
    preproc.validate(trace.fps)
    rgb = _preprocessed_rgb(trace, roi, preproc)
    sig = _omit_core(rgb, trace.fps, preproc.bandpass_low_hz, preproc.bandpass_high_hz)
    return _finalize(sig, trace.fps, preproc)


_EXTRACTORS = {
    GREEN: lambda trace, roi, spec, preproc: extract_green(trace, roi, preproc),
    CHROM: extract_chrom,
    POS: extract_pos,
    LGI: lambda trace, roi, spec, preproc: extract_lgi(trace, roi, preproc),
    OMIT: lambda trace, roi, spec, preproc: extract_omit(trace, roi, preproc),
}


def holistic_trace(trace: RgbTrace) -> RgbTrace:
    """Collapse all ROIs into one whole-face pseudo-ROI by averaging colors."""
    data = trace.data.mean(axis=1, keepdims=True)
    return RgbTrace(
        subject_id=trace.subject_id,
        video_id=trace.video_id,
        fps=trace.fps,
        data=data,
    )


def _resample_to_canonical(sig: np.ndarray, fps: float) -> np.ndarray:
    if fps == CANONICAL_FPS:
        return sig
    n_target = int(np.floor(sig.size * CANONICAL_FPS / fps))
    src_t = np.arange(sig.size) / fps
    dst_t = np.arange(n_target) / CANONICAL_FPS
    return np.interp(dst_t, src_t, sig)


def _center_crop(sig: np.ndarray, length: int) -> np.ndarray:
    if sig.size < length:
        raise ExtractionError(
            f"signal of {sig.size} samples shorter than canonical {length}"
        )
    start = (sig.size - length) // 2
    return sig[start : start + length]


def extract_all(
    trace: RgbTrace,
    spec: MethodSpec,
    preproc: PreprocSpec | None = None,
    holistic: bool = False,
) -> RppgSignal:
    """Apply one method to every ROI and assemble the network input.

    Stacks per-ROI pulses in ROI order, resamples to 50 Hz, center-crops to
    125 samples, and z-scores each channel. ``holistic=True`` averages all
    ROIs first and yields a single-channel signal. Raises ExtractionError
    when every channel degenerates.
    """
    preproc = preproc or PreprocSpec()
    spec.validate(trace.fps)
    preproc.validate(trace.fps)
    if holistic:
        trace = holistic_trace(trace)
    raw_preproc = replace(preproc, normalize=False)
    extractor = _EXTRACTORS[spec.method]
    channels = []
    flagged = []
    for roi in range(trace.rois):
        try:
            sig = extractor(trace, roi, spec, raw_preproc)
        except DegenerateSignalError:
            sig = np.zeros(trace.frames)
        channels.append(_center_crop(_resample_to_canonical(sig, trace.fps), CANONICAL_LEN))
    data = np.zeros((len(channels), CANONICAL_LEN))
    for c, sig in enumerate(channels):
        try:
            data[c] = zscore(sig)
        except DegenerateSignalError:
            flagged.append(c)
    if len(flagged) == len(channels):
        raise ExtractionError(
            f"all {len(channels)} channels degenerate for method {spec.method}"
        )
    return RppgSignal(
        subject_id=trace.subject_id,
        video_id=trace.video_id,
        method=spec.method,
        data=data,
        fps=CANONICAL_FPS,
        degenerate=tuple(flagged),
    )


class HrEstimate(NamedTuple):
    bpm: float
    confident: bool


def estimate_hr(
    signal: np.ndarray,
    fps: float,
    low: float = 0.65,
    high: float = 4.0,
) -> HrEstimate:
    """Spectral heart-rate estimate: 60x the Welch-spectrum peak in-band.

    Flagged not-confident when the peak rises less than 2x above the median
    band power (e.g. on broadband noise).
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 128:
        raise ValueError("estimate_hr needs at least 128 samples")
    if x.std() <= _TINY:
        raise DegenerateSignalError("all-zero signal has no spectral peak")
    nperseg = min(256, x.size)
    freqs, power = welch(x, fs=fps, nperseg=nperseg, nfft=max(4096, nperseg))
    mask = (freqs >= low) & (freqs <= high)
    band_f, band_p = freqs[mask], power[mask]
    k = int(np.argmax(band_p))
    confident = bool(band_p[k] >= 2.0 * np.median(band_p))
    return HrEstimate(bpm=60.0 * float(band_f[k]), confident=confident)


def format_rppg(signal: RppgSignal) -> str:
    out = [
        f"{RPPG_MAGIC} method={signal.method} fps={_fmt(signal.fps)} "
        f"channels={signal.channels} length={signal.length} "
        f"subject={signal.subject_id} video={signal.video_id}"
    ]
    for row in signal.data.T:  # one line per sample, C columns
        out.append(",".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def write_rppg(signal: RppgSignal, path: str | Path) -> None:
    write_bytes_atomic(path, format_rppg(signal).encode("utf-8"))


def read_rppg(path: str | Path) -> RppgSignal:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(RPPG_MAGIC + " "):
        raise FormatError(f"{path}: missing header '{RPPG_MAGIC} ...'")
    fields = {}
    expected = ("method", "fps", "channels", "length", "subject", "video")
    tokens = lines[0][len(RPPG_MAGIC) + 1 :].split()
    if len(tokens) != len(expected):
        raise FormatError(f"{path}: header needs fields {expected}")
    for token, name in zip(tokens, expected):
        key, sep, value = token.partition("=")
        if key != name or not sep:
            raise FormatError(f"{path}: bad header token {token!r}")
        fields[name] = value
    try:
        n_channels = int(fields["channels"])
        n_samples = int(fields["length"])
        fps = float(fields["fps"])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field ({exc})") from exc
    body = [ln for ln in lines[1:] if ln]
    if len(body) != n_samples:
        raise FormatError(f"{path}: expected {n_samples} rows, found {len(body)}")
    try:
        data = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: unparseable cell ({exc})") from exc
    if data.shape != (n_samples, n_channels):
        raise FormatError(
            f"{path}: data shape {data.shape} != ({n_samples}, {n_channels})"
        )
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        row, col = int(bad[0, 0]), int(bad[0, 1])
        raise DataError(f"{path}: non-finite value at sample {row}, channel {col}",
                        row=row, col=col)
    data = data.T
    flagged = tuple(int(c) for c in range(n_channels) if not np.any(data[c]))
    return RppgSignal(
        subject_id=fields["subject"],
        video_id=fields["video"],
        method=fields["method"],
        data=data,
        fps=fps,
        degenerate=flagged,
    )
