"""Training-free posture classifier driven by deviations from a calibrated pose.

A per-user baseline is averaged over an initial calibration window.  Each
live frame yields a torso-normalized deviation vector (per-landmark
Euclidean distance plus signed displacement components for a small set of
key landmarks).  Per-class linear scores over the signed components are
compared against thresholds; handle force sensors contribute to the
hand-lifting classes.  Weights and thresholds ship in a versioned JSON
config (configs/geometric_default.json), tuned once against the zero-noise
synthetic templates, never hard-coded.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .pose import LandmarkFrame, Topology as T

EPS = 1e-6


class GeometricPose(str, Enum):
    STANDING_STILL = "standing_still"
    FALL_FORWARD = "fall_forward"
    FALL_BACKWARD = "fall_backward"
    FALL_LEFT = "fall_left"
    FALL_RIGHT = "fall_right"
    LIFTING_LEFT_HAND = "lifting_left_hand"
    LIFTING_RIGHT_HAND = "lifting_right_hand"
    SITTING = "sitting"


GEOMETRIC_POSE_NAMES: tuple[str, ...] = tuple(p.value for p in GeometricPose)

# Tie-break priority for classify(); earlier wins on equal scores.
CLASS_PRIORITY: tuple[str, ...] = (
    "sitting", "lifting_left_hand", "lifting_right_hand",
    "fall_forward", "fall_backward", "fall_left", "fall_right",
)

# Key points tracked with signed displacement components.
KEY_POINTS: tuple[str, ...] = (
    "nose", "left_shoulder", "right_shoulder", "left_wrist", "right_wrist",
    "mid_shoulder", "mid_hip",
)

_KEY_LANDMARKS = {
    "nose": (T.NOSE,),
    "left_shoulder": (T.LEFT_SHOULDER,),
    "right_shoulder": (T.RIGHT_SHOULDER,),
    "left_wrist": (T.LEFT_WRIST,),
    "right_wrist": (T.RIGHT_WRIST,),
    "mid_shoulder": (T.LEFT_SHOULDER, T.RIGHT_SHOULDER),
    "mid_hip": (T.LEFT_HIP, T.RIGHT_HIP),
}

_COMPONENTS = ("dx", "dy", "dz")


class GeometricError(Exception):
    pass


class ConfigError(GeometricError):
    pass


class CalibrationInsufficientError(GeometricError):
    pass


class CalibrationOccludedError(GeometricError):
    pass


class NotCalibratedError(GeometricError):
    pass


@dataclass(frozen=True)
class ClassRule:
    """Linear score over signed displacement components, plus optional FSR term."""

    weights: dict[str, float]           # "point.component" -> weight
    threshold: float
    fsr_side: Optional[str] = None      # "left" | "right"


@dataclass(frozen=True)
class GeometricConfig:
    classes: dict[str, ClassRule]
    grip_min: float = 0.3
    fsr_weight: float = 1.0
    debounce_frames: int = 5
    n_cal_min: int = 10
    v_min: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.grip_min <= 1.0:
            raise ConfigError("grip_min must be in [0, 1]")
        if self.debounce_frames < 1:
            raise ConfigError("debounce_frames must be >= 1")
        if self.n_cal_min < 1:
            raise ConfigError("n_cal_min must be >= 1")
        for name, rule in self.classes.items():
            if name not in GEOMETRIC_POSE_NAMES:
                raise ConfigError(f"unknown pose class {name!r}")
            if name == GeometricPose.STANDING_STILL.value:
                raise ConfigError("standing_still is the fallback class; it takes no rule")
            if rule.threshold <= 0:
                raise ConfigError(f"{name}: threshold must be > 0")
            if rule.fsr_side not in (None, "left", "right"):
                raise ConfigError(f"{name}: fsr_side must be 'left' or 'right'")
            for key in rule.weights:
                point, _, comp = key.partition(".")
                if point not in KEY_POINTS or comp not in _COMPONENTS:
                    raise ConfigError(f"{name}: unknown weight component {key!r}")

    def scaled(self, factor: float) -> "GeometricConfig":
        """Uniformly scale all weights, thresholds and the FSR weight."""
        if factor <= 0:
            raise ConfigError("scale factor must be > 0")
        classes = {
            name: ClassRule({k: w * factor for k, w in rule.weights.items()},
                            rule.threshold * factor, rule.fsr_side)
            for name, rule in self.classes.items()
        }
        return GeometricConfig(classes, self.grip_min, self.fsr_weight * factor,
                               self.debounce_frames, self.n_cal_min, self.v_min)


_TOP_KEYS = {"version", "grip_min", "fsr_weight", "debounce_frames",
             "n_cal_min", "v_min", "classes"}
_RULE_KEYS = {"weights", "threshold", "fsr_side"}
CONFIG_VERSION = 1


def config_from_obj(obj: dict) -> GeometricConfig:
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if obj.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {obj.get('version')!r}")
    classes = {}
    for name, rule_obj in obj.get("classes", {}).items():
        unknown = set(rule_obj) - _RULE_KEYS
        if unknown:
            raise ConfigError(f"{name}: unknown rule keys {sorted(unknown)}")
        if "threshold" not in rule_obj:
            raise ConfigError(f"{name}: missing threshold")
        classes[name] = ClassRule(
            weights={str(k): float(v) for k, v in rule_obj.get("weights", {}).items()},
            threshold=float(rule_obj["threshold"]),
            fsr_side=rule_obj.get("fsr_side"),
        )
    return GeometricConfig(
        classes=classes,
        grip_min=float(obj.get("grip_min", 0.3)),
        fsr_weight=float(obj.get("fsr_weight", 1.0)),
        debounce_frames=int(obj.get("debounce_frames", 5)),
        n_cal_min=int(obj.get("n_cal_min", 10)),
        v_min=float(obj.get("v_min", 0.5)),
    )


def config_to_obj(config: GeometricConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "grip_min": config.grip_min,
        "fsr_weight": config.fsr_weight,
        "debounce_frames": config.debounce_frames,
        "n_cal_min": config.n_cal_min,
        "v_min": config.v_min,
        "classes": {
            name: {
                "weights": dict(rule.weights),
                "threshold": rule.threshold,
                **({"fsr_side": rule.fsr_side} if rule.fsr_side else {}),
            }
            for name, rule in config.classes.items()
        },
    }


def load_config(path) -> GeometricConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    return config_from_obj(obj)


def save_config(config: GeometricConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_obj(config), fh, indent=2)
        fh.write("\n")


def default_config() -> GeometricConfig:
    text = resources.files("walkerpose").joinpath("configs/geometric_default.json").read_text()
    return config_from_obj(json.loads(text))


@dataclass(frozen=True)
class CalibrationBaseline:
    """Reference pose averaged over the calibration window."""

    coords: np.ndarray           # (33, 3) mean position per landmark
    landmark_valid: np.ndarray   # (33,) bool: landmark seen at least once
    torso_length: float
    frame_count: int
    created_at: float = field(default_factory=time.time)


def calibrate(frames: Sequence[LandmarkFrame],
              config: Optional[GeometricConfig] = None) -> CalibrationBaseline:
    """Average the calibration window into a baseline pose.

    Each landmark's baseline is the mean over the frames where it was
    visible.  Key landmarks must be visible in >= 80% of frames.
    """
    config = config or default_config()
    if len(frames) < config.n_cal_min:
        raise CalibrationInsufficientError(
            f"{len(frames)} calibration frames, need >= {config.n_cal_min}"
        )
    coords = np.stack([f.coords() for f in frames])        # (n, 33, 3)
    vis = np.stack([f.visibilities() for f in frames])     # (n, 33)
    seen = vis >= config.v_min
    seen_frac = seen.mean(axis=0)
    for point, landmarks in _KEY_LANDMARKS.items():
        for lm in landmarks:
            if seen_frac[lm] < 0.8:
                raise CalibrationOccludedError(
                    f"key landmark {lm} ({point}) visible in only "
                    f"{seen_frac[lm]:.0%} of calibration frames"
                )
    counts = seen.sum(axis=0)
    valid = counts > 0
    safe_counts = np.maximum(counts, 1)[:, None]
    mean_coords = (coords * seen[:, :, None]).sum(axis=0) / safe_counts
    mean_coords[~valid] = 0.0
    mid_sh = (mean_coords[T.LEFT_SHOULDER] + mean_coords[T.RIGHT_SHOULDER]) / 2.0
    mid_hip = (mean_coords[T.LEFT_HIP] + mean_coords[T.RIGHT_HIP]) / 2.0
    torso = float(np.linalg.norm(mid_sh - mid_hip))
    if torso <= EPS:
        raise GeometricError("calibrated torso length below eps")
    return CalibrationBaseline(mean_coords, valid, torso, len(frames))


@dataclass(frozen=True)
class DeviationVector:
    """Torso-normalized deviations of a frame from the baseline.

    distances[i] is the Euclidean deviation of landmark i (0 when the
    landmark is below the visibility threshold; see landmark_valid).
    signed holds (dx, dy, dz) displacement for each key point, and
    key_distance the matching norms, so d^2 == dx^2 + dy^2 + dz^2.
    """

    distances: np.ndarray                 # (33,) >= 0
    landmark_valid: np.ndarray            # (33,) bool
    signed: dict[str, np.ndarray]         # key point -> (3,)
    key_distance: dict[str, float]
    key_valid: dict[str, bool]


def deviation(frame: LandmarkFrame, baseline: CalibrationBaseline,
              v_min: float = 0.5) -> DeviationVector:
    coords = frame.coords()
    vis = frame.visibilities()
    valid = (vis >= v_min) & baseline.landmark_valid
    delta = (coords - baseline.coords) / baseline.torso_length
    distances = np.where(valid, np.linalg.norm(delta, axis=1), 0.0)
    signed: dict[str, np.ndarray] = {}
    key_distance: dict[str, float] = {}
    key_valid: dict[str, bool] = {}
    for point, landmarks in _KEY_LANDMARKS.items():
        ok = bool(all(valid[lm] for lm in landmarks))
        if ok:
            live = coords[list(landmarks)].mean(axis=0)
            ref = baseline.coords[list(landmarks)].mean(axis=0)
            comp = (live - ref) / baseline.torso_length
        else:
            comp = np.zeros(3)
        signed[point] = comp
        key_distance[point] = float(np.linalg.norm(comp))
        key_valid[point] = ok
    return DeviationVector(distances, valid, signed, key_distance, key_valid)


def _rule_score(rule: ClassRule, dev: DeviationVector,
                fsr: Optional[tuple[float, float]], config: GeometricConfig) -> float:
    score = 0.0
    for key, weight in rule.weights.items():
        point, _, comp = key.partition(".")
        if dev.key_valid.get(point, False):
            score += weight * float(dev.signed[point][_COMPONENTS.index(comp)])
    if rule.fsr_side is not None and fsr is not None:
        reading = fsr[0] if rule.fsr_side == "left" else fsr[1]
        score += config.fsr_weight * max(0.0, config.grip_min - reading)
    return score


def classify_geometric(dev: DeviationVector,
                       fsr: Optional[tuple[float, float]] = None,
                       config: Optional[GeometricConfig] = None,
                       ) -> tuple[GeometricPose, dict[str, float]]:
    """Argmax over per-class scores exceeding their thresholds.

    Falls back to standing_still when nothing exceeds its threshold; ties
    break by the fixed CLASS_PRIORITY order.
    """
    config = config or default_config()
    scores: dict[str, float] = {}
    best_name: Optional[str] = None
    best_score = -np.inf
    for name in CLASS_PRIORITY:
        rule = config.classes.get(name)
        if rule is None:
            continue
        score = _rule_score(rule, dev, fsr, config)
        scores[name] = score
        if score > rule.threshold and score > best_score:
            best_name, best_score = name, score
    pose = GeometricPose(best_name) if best_name is not None else GeometricPose.STANDING_STILL
    return pose, scores


class Debouncer:
    """Majority vote over the last k raw poses with a post-switch hold.

    After the emitted pose changes, it is held for ceil(k/2) frames, so no
    emitted run can be shorter than ceil(k/2).
    """

    def __init__(self, k: int):
        if k < 1:
            raise GeometricError("debounce window must be >= 1")
        self.k = k
        self.hold = (k + 1) // 2
        self._window: list[GeometricPose] = []
        self._current: Optional[GeometricPose] = None
        self._since_switch = 0

    def push(self, raw: GeometricPose) -> GeometricPose:
        self._window.append(raw)
        if len(self._window) > self.k:
            self._window.pop(0)
        counts: dict[GeometricPose, int] = {}
        for p in self._window:
            counts[p] = counts.get(p, 0) + 1
        top = max(counts.values())
        winners = [p for p in self._window if counts[p] == top]
        vote = self._current if self._current in winners else winners[0]
        if self._current is None:
            self._current = vote
        elif vote != self._current and self._since_switch >= self.hold:
            self._current = vote
            self._since_switch = 0
        self._since_switch += 1
        return self._current


@dataclass(frozen=True)
class StreamResult:
    poses: tuple[GeometricPose, ...]       # debounced, one per frame
    raw: tuple[GeometricPose, ...]
    transitions: tuple[tuple[int, str, str], ...]  # (timestamp_ms, from, to)


def classify_stream_geometric(frames: Sequence[LandmarkFrame],
                              baseline: Optional[CalibrationBaseline],
                              config: Optional[GeometricConfig] = None) -> StreamResult:
    """Per-frame classification smoothed by the debouncer."""
    if baseline is None:
        raise NotCalibratedError("no calibration baseline")
    config = config or default_config()
    debouncer = Debouncer(config.debounce_frames)
    poses: list[GeometricPose] = []
    raw: list[GeometricPose] = []
    transitions: list[tuple[int, str, str]] = []
    prev: Optional[GeometricPose] = None
    for frame in frames:
        dev = deviation(frame, baseline, config.v_min)
        pose, _ = classify_geometric(dev, frame.fsr, config)
        raw.append(pose)
        smoothed = debouncer.push(pose)
        poses.append(smoothed)
        if prev is not None and smoothed != prev:
            transitions.append((frame.timestamp_ms, prev.value, smoothed.value))
        prev = smoothed
    return StreamResult(tuple(poses), tuple(raw), tuple(transitions))
