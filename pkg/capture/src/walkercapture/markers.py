"""Color-coded landmark rendering and decoding for synthetic test footage.

Each of the 33 landmarks gets a unique saturated color (17 hues x 2
brightness tiers), drawn as a filled dot on a dark stick figure.  The
matching detector recovers landmark positions from such footage by blob
centroids and nearest-palette color, which gives an end-to-end testable
capture path without a learned pose model or a live camera.
"""
from __future__ import annotations

import cv2
import numpy as np

N_LANDMARKS = 33

_HUES = 17          # OpenCV hue range is [0, 180)
_VALUE_HIGH = 255
_VALUE_LOW = 150

# Skeleton bones drawn under the markers (landmark index pairs).
BONES = [
    (11, 12), (23, 24), (11, 13), (13, 15), (12, 14), (14, 16),
    (11, 23), (12, 24), (23, 25), (25, 27), (24, 26), (26, 28),
    (7, 0), (8, 0), (0, 2), (0, 5),
]


def palette_bgr() -> np.ndarray:
    """(33, 3) uint8 BGR palette, one unique color per landmark."""
    hsv = np.zeros((N_LANDMARKS, 1, 3), dtype=np.uint8)
    for i in range(N_LANDMARKS):
        hue = (i % _HUES) * (180 // _HUES)
        value = _VALUE_HIGH if i < _HUES else _VALUE_LOW
        hsv[i, 0] = (hue, 255, value)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2BGR).reshape(N_LANDMARKS, 3)


PALETTE = palette_bgr()

MARKER_RADIUS = 6
_BACKGROUND = (28, 28, 28)
_BONE_COLOR = (90, 90, 90)


def render_frame(coords: np.ndarray, width: int, height: int) -> np.ndarray:
    """Draw one stick figure with color-coded joint markers.

    coords: (33, >=2) normalized landmark positions (x, y in [0, 1]).
    """
    img = np.full((height, width, 3), _BACKGROUND, dtype=np.uint8)
    px = np.stack([np.clip(coords[:, 0] * width, 0, width - 1),
                   np.clip(coords[:, 1] * height, 0, height - 1)], axis=1)
    px = px.astype(int)
    for a, b in BONES:
        cv2.line(img, tuple(px[a]), tuple(px[b]), _BONE_COLOR, 2)
    head = ((px[7] + px[8]) // 2)
    cv2.circle(img, tuple(head), int(0.035 * height), _BONE_COLOR, 2)
    for i in range(N_LANDMARKS):
        cv2.circle(img, tuple(px[i]), MARKER_RADIUS, tuple(int(c) for c in PALETTE[i]), -1)
    return img


def write_video(path, frames, fps: float = 10.0) -> None:
    """Encode rendered frames as MJPG (high quality keeps marker hues stable)."""
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to write")
    height, width = frames[0].shape[:2]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"),
                             fps, (width, height))
    if not writer.isOpened():
        raise RuntimeError("could not open MJPG video writer")
    writer.set(cv2.VIDEOWRITER_PROP_QUALITY, 95)
    for frame in frames:
        writer.write(frame)
    writer.release()


_MIN_PIXELS = 25
_MAX_COLOR_DIST = 60.0  # BGR distance gate against compression artifacts


def decode_frame(img: np.ndarray) -> np.ndarray:
    """Recover (33, 4) [x, y, z, visibility] from a rendered frame.

    Saturated pixels are classified to the nearest palette color, then each
    landmark takes the centroid of its own pixels, so partially overdrawn
    markers still decode.  Missing landmarks get visibility 0; z is not
    encoded in the footage and reads back as 0.
    """
    height, width = img.shape[:2]
    hsv = cv2.cvtColor(img, cv2.COLOR_BGR2HSV)
    mask = (hsv[:, :, 1] > 120) & (hsv[:, :, 2] > 60)
    ys, xs = np.nonzero(mask)
    out = np.zeros((N_LANDMARKS, 4), dtype=np.float64)
    if ys.size == 0:
        return out
    pixels = img[ys, xs].astype(np.float64)                   # (m, 3)
    dist = np.linalg.norm(pixels[:, None, :] - PALETTE[None, :, :].astype(np.float64),
                          axis=2)                             # (m, 33)
    nearest = np.argmin(dist, axis=1)
    confident = dist[np.arange(ys.size), nearest] < _MAX_COLOR_DIST
    ys, xs, nearest = ys[confident], xs[confident], nearest[confident]
    if ys.size == 0:
        return out
    # group pixels by (connected component, landmark id): a marker is one
    # solid blob, while compression artifacts are scattered specks, so the
    # largest group per id is the marker even when markers overlap
    _, comp_map = cv2.connectedComponents(mask.astype(np.uint8), 8)
    groups = comp_map[ys, xs].astype(np.int64) * N_LANDMARKS + nearest
    order = np.argsort(groups, kind="stable")
    groups_sorted = groups[order]
    boundaries = np.nonzero(np.diff(groups_sorted))[0] + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [groups_sorted.size]])
    best_size = np.zeros(N_LANDMARKS, dtype=np.int64)
    for start, end in zip(starts, ends):
        size = end - start
        idx = int(groups_sorted[start] % N_LANDMARKS)
        if size < _MIN_PIXELS or size <= best_size[idx]:
            continue
        best_size[idx] = size
        sel = order[start:end]
        out[idx] = (np.median(xs[sel]) / width, np.median(ys[sel]) / height,
                    0.0, 1.0)
    return out


def found_count(landmarks: np.ndarray) -> int:
    return int(np.sum(landmarks[:, 3] > 0))
