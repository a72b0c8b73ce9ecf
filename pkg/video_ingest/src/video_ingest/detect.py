"""Face localization per frame.

The default detector segments skin-colored pixels in YCrCb space and takes
the largest connected component; it needs no model files and behaves
deterministically. A Haar cascade can be supplied when an XML is available,
and ``full`` uses the entire frame (no face localization).
"""

from __future__ import annotations

import cv2
import numpy as np

Box = tuple[int, int, int, int]  # x, y, w, h in pixels

# classic YCrCb skin thresholds
_SKIN_LOW = (40, 135, 85)
_SKIN_HIGH = (255, 180, 135)
_MIN_AREA_FRACTION = 0.005


class FaceError(Exception):
    """Face undetectable in too many frames."""


def detect_skin(frame_bgr: np.ndarray) -> Box | None:
    ycrcb = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2YCrCb)
    mask = cv2.inRange(ycrcb, _SKIN_LOW, _SKIN_HIGH)
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (5, 5))
    mask = cv2.morphologyEx(mask, cv2.MORPH_OPEN, kernel)
    mask = cv2.morphologyEx(mask, cv2.MORPH_CLOSE, kernel)
    n_labels, _, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)
    if n_labels < 2:
        return None
    areas = stats[1:, cv2.CC_STAT_AREA]
    best = 1 + int(np.argmax(areas))
    if stats[best, cv2.CC_STAT_AREA] < _MIN_AREA_FRACTION * mask.size:
        return None
    return (
        int(stats[best, cv2.CC_STAT_LEFT]),
        int(stats[best, cv2.CC_STAT_TOP]),
        int(stats[best, cv2.CC_STAT_WIDTH]),
        int(stats[best, cv2.CC_STAT_HEIGHT]),
    )


class HaarDetector:
    def __init__(self, cascade_path: str):
        self.cascade = cv2.CascadeClassifier(cascade_path)
        if self.cascade.empty():
            raise FaceError(f"cannot load cascade {cascade_path!r}")

    def __call__(self, frame_bgr: np.ndarray) -> Box | None:
        gray = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2GRAY)
        faces = self.cascade.detectMultiScale(gray, 1.2, 4)
        if len(faces) == 0:
            return None
        x, y, w, h = max(faces, key=lambda f: f[2] * f[3])
        return int(x), int(y), int(w), int(h)


def detect_full(frame_bgr: np.ndarray) -> Box | None:
    h, w = frame_bgr.shape[:2]
    return (0, 0, w, h)


def make_detector(name: str, cascade: str | None = None):
    if name == "skin":
        return detect_skin
    if name == "full":
        return detect_full
    if name == "haar":
        if not cascade:
            raise FaceError("haar detector needs --cascade <xml>")
        return HaarDetector(cascade)
    raise ValueError(f"unknown detector {name!r}")


def aligned_crop(
    frame_bgr: np.ndarray, box: Box, size: int = 200, margin: float = 0.15
) -> np.ndarray:
    """Square, margin-padded, resized face crop in RGB.

    Without landmarks, alignment means a stable normalized framing: pad the
    detection box to a square with margin, clamp to the frame, resize.
    """
    x, y, w, h = box
    cx, cy = x + w / 2.0, y + h / 2.0
    half = max(w, h) * (1.0 + margin) / 2.0
    fh, fw = frame_bgr.shape[:2]
    x0 = int(max(0, round(cx - half)))
    x1 = int(min(fw, round(cx + half)))
    y0 = int(max(0, round(cy - half)))
    y1 = int(min(fh, round(cy + half)))
    crop = frame_bgr[y0:y1, x0:x1]
    crop = cv2.resize(crop, (size, size), interpolation=cv2.INTER_AREA)
    return cv2.cvtColor(crop, cv2.COLOR_BGR2RGB)
