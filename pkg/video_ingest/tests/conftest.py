import cv2
import numpy as np
import pytest


def write_video(path, frames_bgr, fps=50.0):
    """Write frames losslessly (FFV1), falling back to MJPG."""
    h, w = frames_bgr[0].shape[:2]
    for fourcc in ("FFV1", "MJPG"):
        writer = cv2.VideoWriter(
            str(path), cv2.VideoWriter_fourcc(*fourcc), fps, (w, h)
        )
        if writer.isOpened():
            for frame in frames_bgr:
                writer.write(frame)
            writer.release()
            return
        writer.release()
    raise RuntimeError("no usable video codec")


def solid_frames(color_bgr, size=(120, 120), n=150):
    frame = np.full((size[1], size[0], 3), color_bgr, np.uint8)
    return [frame.copy() for _ in range(n)]


def face_frames(n=500, fps=50.0, freq=1.2, amp=6.0, size=(160, 200)):
    """Dark background, skin-colored ellipse, green channel modulated."""
    w, h = size
    frames = []
    for i in range(n):
        frame = np.full((h, w, 3), (40, 40, 40), np.uint8)
        g = 110.0 + amp * np.sin(2 * np.pi * freq * i / fps)
        color = (95, int(round(g)), 140)  # BGR, skin-like
        cv2.ellipse(frame, (w // 2, h // 2), (50, 70), 0, 0, 360, color, -1)
        frames.append(frame)
    return frames


@pytest.fixture(scope="session")
def face_video(tmp_path_factory):
    path = tmp_path_factory.mktemp("videos") / "face.avi"
    write_video(path, face_frames(n=500, fps=50.0, freq=1.2))
    return path
