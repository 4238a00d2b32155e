"""Capture loop: video/camera -> pose detector -> landmark stream.

Emits the walkerpose formats only (dataset NDJSON in record mode, the
newline-delimited wire protocol in live mode); the adapter never computes
features or classifications itself.  Frames where the detector finds no
body are dropped and counted.
"""
from __future__ import annotations

import json
import socket
import time
from dataclasses import dataclass
from typing import Optional

import cv2

from .detectors import make_detector

SCHEMA_VERSION = 1


class SourceError(Exception):
    """Video/camera source cannot be opened (CLI exit 2)."""


@dataclass(frozen=True)
class CaptureConfig:
    source: str                      # camera index ("0") or video path
    target_fps: float = 10.0
    participant_id: str = "live"
    view: str = "full"               # "full" | "upper"
    backend: str = "mediapipe"
    record_label: Optional[str] = None   # posture class name (record mode)
    record_walker: bool = True
    record_init: str = "standing"
    max_frames: Optional[int] = None

    def __post_init__(self):
        if self.target_fps <= 0:
            raise ValueError("target_fps must be > 0")
        if self.view not in ("full", "upper"):
            raise ValueError("view must be 'full' or 'upper'")
        if self.record_init not in ("sitting", "standing"):
            raise ValueError("record_init must be 'sitting' or 'standing'")


@dataclass
class CaptureStats:
    emitted: int = 0
    dropped: int = 0


def _open_source(source: str) -> cv2.VideoCapture:
    cap = cv2.VideoCapture(int(source) if source.isdigit() else source)
    if not cap.isOpened():
        raise SourceError(f"cannot open source {source!r}")
    return cap


def _frame_obj(config: CaptureConfig, ts_ms: int, landmarks) -> dict:
    return {
        "ts": ts_ms,
        "pid": config.participant_id,
        "view": config.view,
        "lm": [[float(x), float(y), float(z), float(v)] for x, y, z, v in landmarks],
        "fsr": None,  # this adapter has no force-sensor hardware
    }


def capture_frames(config: CaptureConfig, stats: CaptureStats):
    """Yield (timestamp_ms, landmarks) at <= target_fps; count dropped frames."""
    detector = make_detector(config.backend)
    cap = _open_source(config.source)
    is_camera = config.source.isdigit()
    src_fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
    if src_fps <= 0:
        src_fps = config.target_fps
    interval = 1.0 / config.target_fps
    next_t = 0.0
    frame_idx = 0
    wall_start = time.monotonic()
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            t = ((time.monotonic() - wall_start) if is_camera
                 else frame_idx / src_fps)
            frame_idx += 1
            if t + 1e-9 < next_t:
                continue
            next_t = t + interval
            landmarks = detector.detect(frame)
            if landmarks is None:
                stats.dropped += 1
                continue
            stats.emitted += 1
            yield int(round(t * 1000.0)), landmarks
            if config.max_frames and stats.emitted >= config.max_frames:
                break
    finally:
        cap.release()
        detector.close()


def record(config: CaptureConfig, out_path) -> CaptureStats:
    """Record mode: write dataset NDJSON with the configured label."""
    if not config.record_label:
        raise ValueError("record mode requires a posture label")
    stats = CaptureStats()
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA_VERSION,
                             "vocab": [config.record_label],
                             "provenance": {"source": f"walkercapture:{config.source}",
                                            "backend": config.backend}}) + "\n")
        for ts_ms, landmarks in capture_frames(config, stats):
            obj = _frame_obj(config, ts_ms, landmarks)
            obj["labels"] = {"walker": int(config.record_walker),
                             "init": config.record_init,
                             "posture": 0,
                             "risk": None}
            fh.write(json.dumps(obj) + "\n")
    return stats


def stream(config: CaptureConfig, host: str, port: int,
           calibrate_frames: int = 0, retries: int = 3,
           on_response=None) -> CaptureStats:
    """Live mode: send wire-protocol frames over TCP, reading one response each."""
    stats = CaptureStats()
    last_error = None
    for attempt in range(retries):
        try:
            sock = socket.create_connection((host, port), timeout=10)
            break
        except OSError as exc:
            last_error = exc
            time.sleep(0.5 * (attempt + 1))
    else:
        raise SourceError(f"cannot connect to {host}:{port}: {last_error}")
    with sock:
        fh = sock.makefile("rw", encoding="utf-8", newline="\n")
        if calibrate_frames > 0:
            fh.write(json.dumps({"type": "calibrate",
                                 "frames": calibrate_frames}) + "\n")
            fh.flush()
            response = fh.readline()
            if on_response and response:
                on_response(response.rstrip("\n"))
        for ts_ms, landmarks in capture_frames(config, stats):
            obj = _frame_obj(config, ts_ms, landmarks)
            obj["type"] = "frame"
            fh.write(json.dumps(obj) + "\n")
            fh.flush()
            response = fh.readline()
            if on_response and response:
                on_response(response.rstrip("\n"))
    return stats
