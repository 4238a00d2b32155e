"""Pose detector backends.

`mediapipe` is the default for real footage; it is an optional dependency,
so initialization fails cleanly when the package is absent.  `marker`
decodes the color-coded synthetic footage produced by markers.render_frame
and backs the bundled-video tests.
"""
from __future__ import annotations

import numpy as np

from . import markers


class DetectorError(Exception):
    """Backend unavailable or failed to initialize (CLI exit 3)."""


class MarkerDetector:
    """Decodes color-coded joint markers; needs >= min_found blobs per frame."""

    name = "marker"

    def __init__(self, min_found: int = 25):
        self.min_found = min_found

    def detect(self, frame_bgr: np.ndarray):
        landmarks = markers.decode_frame(frame_bgr)
        if markers.found_count(landmarks) < self.min_found:
            return None
        return landmarks

    def close(self):
        pass


class MediaPipeDetector:
    """Wraps the MediaPipe pose landmarker (33 landmarks, lite model)."""

    name = "mediapipe"

    def __init__(self, model_complexity: int = 0,
                 min_detection_confidence: float = 0.5):
        try:
            import mediapipe as mp
        except ImportError as exc:
            raise DetectorError(
                "mediapipe is not installed (pip install walkercapture[mediapipe])"
            ) from exc
        try:
            self._pose = mp.solutions.pose.Pose(
                model_complexity=model_complexity,
                min_detection_confidence=min_detection_confidence)
        except Exception as exc:  # model load failure
            raise DetectorError(f"mediapipe init failed: {exc}") from exc

    def detect(self, frame_bgr: np.ndarray):
        import cv2
        rgb = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2RGB)
        result = self._pose.process(rgb)
        if result.pose_landmarks is None:
            return None
        out = np.zeros((33, 4), dtype=np.float64)
        for i, lm in enumerate(result.pose_landmarks.landmark):
            out[i] = (lm.x, lm.y, lm.z, lm.visibility)
        return out

    def close(self):
        self._pose.close()


BACKENDS = {
    "mediapipe": MediaPipeDetector,
    "marker": MarkerDetector,
}


def make_detector(name: str):
    try:
        backend = BACKENDS[name]
    except KeyError:
        raise DetectorError(f"unknown detector backend {name!r}") from None
    return backend()
