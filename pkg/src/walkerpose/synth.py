"""Seeded parametric generator of landmark datasets and scripted sessions.

Stands in for the unavailable human recordings at the same experimental
shape: 21 participants, 17 posture classes, 10 FPS.  Every pose is derived
from one hand-authored standing stick figure (normalized image coordinates,
y grows downward, the subject faces the camera so their left side is at
larger x, z is negative towards the camera).

The templates are the single ground truth used to tune the geometric
classifier defaults and to freeze derived feature values in tests;
scripts/render_templates.py draws them for the docs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometric import GEOMETRIC_POSE_NAMES
from .pose import (
    DEFAULT_VOCABULARY,
    Dataset,
    InitialPosition,
    LabelRecord,
    LabelVocabulary,
    LandmarkFrame,
    RiskLabel,
    Topology as T,
    View,
    frame_from_arrays,
)

LEG_LANDMARKS = tuple(range(25, 33))  # knees, ankles, heels, foot tips
_HEAD = tuple(range(0, 11))
_UPPER_BODY = tuple(range(0, 23))  # head, shoulders, arms, hands
_LEFT_FOREARM = (T.LEFT_WRIST, T.LEFT_PINKY, T.LEFT_INDEX, T.LEFT_THUMB)
_RIGHT_FOREARM = (T.RIGHT_WRIST, T.RIGHT_PINKY, T.RIGHT_INDEX, T.RIGHT_THUMB)
_LEFT_ARM = (T.LEFT_ELBOW,) + _LEFT_FOREARM
_RIGHT_ARM = (T.RIGHT_ELBOW,) + _RIGHT_FOREARM

# Standing reference figure; torso (mid-shoulder to mid-hip) length 0.25.
_BASE = np.array([
    # head
    [0.500, 0.220, -0.050],   # nose
    [0.515, 0.200, -0.050],   # left eye inner
    [0.525, 0.200, -0.050],   # left eye
    [0.535, 0.200, -0.050],   # left eye outer
    [0.485, 0.200, -0.050],   # right eye inner
    [0.475, 0.200, -0.050],   # right eye
    [0.465, 0.200, -0.050],   # right eye outer
    [0.545, 0.210, -0.020],   # left ear
    [0.455, 0.210, -0.020],   # right ear
    [0.515, 0.235, -0.040],   # mouth left
    [0.485, 0.235, -0.040],   # mouth right
    # shoulders / arms (hands resting on the walker handles)
    [0.565, 0.300, 0.000],    # left shoulder
    [0.435, 0.300, 0.000],    # right shoulder
    [0.585, 0.420, 0.000],    # left elbow
    [0.415, 0.420, 0.000],    # right elbow
    [0.600, 0.530, -0.020],   # left wrist
    [0.400, 0.530, -0.020],   # right wrist
    [0.610, 0.555, -0.020],   # left pinky
    [0.390, 0.555, -0.020],   # right pinky
    [0.615, 0.545, -0.030],   # left index
    [0.385, 0.545, -0.030],   # right index
    [0.605, 0.540, -0.025],   # left thumb
    [0.395, 0.540, -0.025],   # right thumb
    # hips / legs
    [0.545, 0.550, 0.000],    # left hip
    [0.455, 0.550, 0.000],    # right hip
    [0.545, 0.720, 0.000],    # left knee
    [0.455, 0.720, 0.000],    # right knee
    [0.545, 0.880, 0.000],    # left ankle
    [0.455, 0.880, 0.000],    # right ankle
    [0.545, 0.905, 0.010],    # left heel
    [0.455, 0.905, 0.010],    # right heel
    [0.545, 0.920, -0.030],   # left foot tip
    [0.455, 0.920, -0.030],   # right foot tip
], dtype=np.float64)

_MID_HIP = (_BASE[T.LEFT_HIP] + _BASE[T.RIGHT_HIP]) / 2.0
_MID_SHOULDER = (_BASE[T.LEFT_SHOULDER] + _BASE[T.RIGHT_SHOULDER]) / 2.0

FSR_HELD = (0.7, 0.7)
FSR_RELEASED = (0.0, 0.0)


@dataclass(frozen=True)
class PostureTemplate:
    """Canonical landmark positions and grip pressures for one pose class."""

    name: str
    coords: np.ndarray          # (33, 3)
    fsr: tuple[float, float]
    view: View = View.FULL_BODY


def _rotated(coords: np.ndarray, indices: Sequence[int], center: np.ndarray,
             plane: tuple[int, int], degrees: float) -> np.ndarray:
    """Rotate the given landmarks about `center` within a coordinate plane.

    Positive angles rotate the first plane axis towards the second, so in
    (y, z) a positive angle tips the torso towards the camera (forward
    lean), in (x, y) towards the subject's left, and in (x, z) it twists
    the subject's left side away from the camera.
    """
    out = coords.copy()
    i, j = plane
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    di = out[list(indices), i] - center[i]
    dj = out[list(indices), j] - center[j]
    out[list(indices), i] = center[i] + c * di - s * dj
    out[list(indices), j] = center[j] + s * di + c * dj
    return out


def _shifted(coords: np.ndarray, indices: Sequence[int], delta) -> np.ndarray:
    out = coords.copy()
    out[list(indices)] += np.asarray(delta, dtype=np.float64)
    return out


def _lean(degrees: float, plane: tuple[int, int]) -> np.ndarray:
    """Whole upper body (head, arms, shoulders) pivoting about the mid-hip."""
    return _rotated(_BASE, _UPPER_BODY, _MID_HIP, plane, degrees)


def _head_pitch(degrees: float) -> np.ndarray:
    return _rotated(_BASE, _HEAD, _MID_SHOULDER, (1, 2), degrees)


def _crouch(base: np.ndarray, hip_drop: float, knee_forward: float,
            pitch_deg: float) -> np.ndarray:
    """Sit-like pose: torso drops, knees come towards the camera."""
    out = base.copy()
    out = _shifted(out, list(_UPPER_BODY) + [T.LEFT_HIP, T.RIGHT_HIP], (0.0, hip_drop, 0.0))
    out[[T.LEFT_KNEE, T.RIGHT_KNEE], 2] -= knee_forward
    out[[T.LEFT_ANKLE, T.RIGHT_ANKLE], 2] -= knee_forward * 0.75
    out[[T.LEFT_HEEL, T.RIGHT_HEEL], 2] -= knee_forward * 0.75
    out[[T.LEFT_FOOT_INDEX, T.RIGHT_FOOT_INDEX], 2] -= knee_forward * 0.75
    mid_hip = (out[T.LEFT_HIP] + out[T.RIGHT_HIP]) / 2.0
    return _rotated(out, _UPPER_BODY, mid_hip, (1, 2), pitch_deg)


def _raise_arm(base: np.ndarray, side: str) -> np.ndarray:
    """Straighten one arm overhead; the grip on that side is released."""
    out = base.copy()
    if side == "left":
        sx = out[T.LEFT_SHOULDER, 0]
        out[T.LEFT_ELBOW] = (sx + 0.010, 0.185, -0.010)
        out[T.LEFT_WRIST] = (sx + 0.015, 0.070, -0.020)
        out[T.LEFT_PINKY] = (sx + 0.018, 0.044, -0.020)
        out[T.LEFT_INDEX] = (sx + 0.020, 0.048, -0.030)
        out[T.LEFT_THUMB] = (sx + 0.012, 0.052, -0.025)
    else:
        sx = out[T.RIGHT_SHOULDER, 0]
        out[T.RIGHT_ELBOW] = (sx - 0.010, 0.185, -0.010)
        out[T.RIGHT_WRIST] = (sx - 0.015, 0.070, -0.020)
        out[T.RIGHT_PINKY] = (sx - 0.018, 0.044, -0.020)
        out[T.RIGHT_INDEX] = (sx - 0.020, 0.048, -0.030)
        out[T.RIGHT_THUMB] = (sx - 0.012, 0.052, -0.025)
    return out


def _fold_elbow(base: np.ndarray, side: str) -> np.ndarray:
    """Fold a forearm up so the wrist sits in front of the shoulder."""
    out = base.copy()
    if side == "left":
        out[T.LEFT_WRIST] = (0.575, 0.310, -0.050)
        out[T.LEFT_PINKY] = (0.573, 0.285, -0.052)
        out[T.LEFT_INDEX] = (0.577, 0.288, -0.060)
        out[T.LEFT_THUMB] = (0.570, 0.295, -0.055)
    else:
        out[T.RIGHT_WRIST] = (0.425, 0.310, -0.050)
        out[T.RIGHT_PINKY] = (0.427, 0.285, -0.052)
        out[T.RIGHT_INDEX] = (0.423, 0.288, -0.060)
        out[T.RIGHT_THUMB] = (0.430, 0.295, -0.055)
    return out


def _t_pose() -> np.ndarray:
    out = _BASE.copy()
    for side, sign in (("left", 1.0), ("right", -1.0)):
        sx = out[T.LEFT_SHOULDER if side == "left" else T.RIGHT_SHOULDER, 0]
        arm = _LEFT_ARM if side == "left" else _RIGHT_ARM
        elbow, wrist, pinky, index, thumb = arm
        out[elbow] = (sx + sign * 0.150, 0.300, 0.000)
        out[wrist] = (sx + sign * 0.300, 0.300, 0.000)
        out[pinky] = (sx + sign * 0.330, 0.300, 0.000)
        out[index] = (sx + sign * 0.335, 0.298, -0.005)
        out[thumb] = (sx + sign * 0.325, 0.305, -0.005)
    return out


def _twist(degrees: float) -> np.ndarray:
    """Shoulder girdle and head rotating about the vertical torso axis."""
    out = _rotated(_BASE, _UPPER_BODY, _MID_HIP, (0, 2), degrees)
    return out


def _build_templates() -> dict[str, PostureTemplate]:
    t: dict[str, PostureTemplate] = {}

    def add(name, coords, fsr=FSR_HELD):
        t[name] = PostureTemplate(name, np.asarray(coords, dtype=np.float64), fsr)

    add("standing", _BASE)
    add("sitting", _crouch(_BASE, hip_drop=0.130, knee_forward=0.160, pitch_deg=0.0),
        fsr=FSR_RELEASED)
    # Transfer poses sit between standing and sitting; deliberately close to
    # the lean family so participant-specific proportions matter.
    add("sit_to_stand", _crouch(_BASE, hip_drop=0.085, knee_forward=0.090, pitch_deg=20.0),
        fsr=(0.6, 0.6))
    add("stand_to_sit", _crouch(_BASE, hip_drop=0.020, knee_forward=0.025, pitch_deg=10.0),
        fsr=(0.6, 0.6))
    add("lean_forward", _lean(25.0, (1, 2)))
    add("lean_backward", _lean(-18.0, (1, 2)))
    add("lean_left", _lean(20.0, (0, 1)))
    add("lean_right", _lean(-20.0, (0, 1)))
    add("twist_left", _twist(45.0))
    add("twist_right", _twist(-45.0))
    add("raise_left_arm", _raise_arm(_BASE, "left"), fsr=(0.0, 0.7))
    add("raise_right_arm", _raise_arm(_BASE, "right"), fsr=(0.7, 0.0))
    add("raise_both_arms", _raise_arm(_raise_arm(_BASE, "left"), "right"), fsr=FSR_RELEASED)
    add("elbow_fold_left", _fold_elbow(_BASE, "left"), fsr=(0.0, 0.7))
    add("elbow_fold_right", _fold_elbow(_BASE, "right"), fsr=(0.7, 0.0))
    add("head_down", _head_pitch(45.0))
    add("head_up", _head_pitch(-45.0))

    # Extra templates for the 8-pose geometric session and for tests.
    add("t_pose", _t_pose())
    add("standing_still", _BASE)
    add("fall_forward", _lean(40.0, (1, 2)))
    add("fall_backward", _lean(-30.0, (1, 2)))
    add("fall_left", _lean(35.0, (0, 1)))
    add("fall_right", _lean(-35.0, (0, 1)))
    add("lifting_left_hand", _raise_arm(_BASE, "left"), fsr=(0.0, 0.7))
    add("lifting_right_hand", _raise_arm(_BASE, "right"), fsr=(0.7, 0.0))
    return t


TEMPLATES: dict[str, PostureTemplate] = _build_templates()


class GeneratorError(Exception):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Per-frame jitter, per-participant proportions offset, leg dropout."""

    jitter_sigma: float = 0.01
    participant_sigma: float = 0.02
    leg_dropout: float = 1.0  # probability per leg landmark in upper-body view
    seed: int = 0

    def __post_init__(self):
        if self.jitter_sigma < 0 or self.participant_sigma < 0:
            raise GeneratorError("noise sigmas must be >= 0")
        if not 0.0 <= self.leg_dropout <= 1.0:
            raise GeneratorError("leg_dropout must be in [0, 1]")


ZERO_NOISE = NoiseModel(jitter_sigma=0.0, participant_sigma=0.0)

# Classes where at least one hand keeps the walker handles.
_DEFAULT_WALKER_TRUE = frozenset(
    name for name in DEFAULT_VOCABULARY.names if name not in ("sitting", "raise_both_arms")
)
_DEFAULT_INIT_SITTING = frozenset({"sitting", "sit_to_stand"})


def default_risk_for(class_name: str) -> RiskLabel:
    if class_name == "standing":
        return RiskLabel.STANDING
    if class_name == "sitting":
        return RiskLabel.SITTING
    return RiskLabel.BAD_POSTURE


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape and labeling rules of a generated dataset."""

    n_participants: int = 21
    frames_per_class: int = 120  # 12 s at 10 FPS
    vocabulary: LabelVocabulary = DEFAULT_VOCABULARY
    view: View = View.FULL_BODY
    fps: float = 10.0
    walker_true_classes: frozenset[str] = _DEFAULT_WALKER_TRUE
    init_sitting_classes: frozenset[str] = _DEFAULT_INIT_SITTING

    def __post_init__(self):
        if self.n_participants < 1 or self.frames_per_class < 1:
            raise GeneratorError("participant and frame counts must be >= 1")
        for name in self.vocabulary.names:
            if name not in TEMPLATES:
                raise GeneratorError(f"no template for class {name!r}")

    def labels_for(self, class_name: str) -> LabelRecord:
        return LabelRecord(
            walker_choice=class_name in self.walker_true_classes,
            initial_position=(InitialPosition.SITTING
                              if class_name in self.init_sitting_classes
                              else InitialPosition.STANDING),
            posture_type=self.vocabulary.id_of(class_name),
            risk_label=default_risk_for(class_name),
        )


DEFAULT_GENERATOR_SPEC = GeneratorSpec()


def _participant_rng(seed: int, participant: int) -> np.random.Generator:
    return np.random.default_rng((seed, participant))


def _visibility_for(rng: np.random.Generator, view: View, noise: NoiseModel) -> np.ndarray:
    vis = np.ones(33, dtype=np.float64)
    if view is View.UPPER_BODY and noise.leg_dropout > 0:
        drop = rng.random(len(LEG_LANDMARKS)) < noise.leg_dropout
        vis[list(LEG_LANDMARKS)] = np.where(drop, 0.0, 1.0)
    return vis


def generate_dataset(spec: GeneratorSpec = DEFAULT_GENERATOR_SPEC,
                     noise: NoiseModel = NoiseModel(),
                     seed: Optional[int] = None) -> Dataset:
    """Deterministic dataset: template + participant offset + frame jitter."""
    seed = noise.seed if seed is None else seed
    step_ms = int(round(1000.0 / spec.fps))
    samples = []
    for p in range(spec.n_participants):
        rng = _participant_rng(seed, p)
        pid = f"p{p:02d}"
        offset = rng.normal(0.0, noise.participant_sigma, (33, 3))
        ts = 0
        for class_name in spec.vocabulary.names:
            template = TEMPLATES[class_name]
            labels = spec.labels_for(class_name)
            for _ in range(spec.frames_per_class):
                coords = template.coords + offset
                if noise.jitter_sigma > 0:
                    coords = coords + rng.normal(0.0, noise.jitter_sigma, (33, 3))
                vis = _visibility_for(rng, spec.view, noise)
                frame = frame_from_arrays(coords, vis, timestamp_ms=ts,
                                          participant_id=pid, view=spec.view,
                                          fsr=template.fsr)
                samples.append((frame, labels))
                ts += step_ms
    provenance = {
        "source": "walkerpose.synth",
        "seed": seed,
        "jitter_sigma": noise.jitter_sigma,
        "participant_sigma": noise.participant_sigma,
        "n_participants": spec.n_participants,
        "frames_per_class": spec.frames_per_class,
    }
    return Dataset(tuple(samples), spec.vocabulary, provenance)


# --- scripted sessions -------------------------------------------------------

SESSION_VOCABULARY = LabelVocabulary(GEOMETRIC_POSE_NAMES)

DEFAULT_SESSION_SCRIPT: tuple[tuple[str, float], ...] = tuple(
    (name, 15.0) for name in GEOMETRIC_POSE_NAMES
)

TRANSITION_S = 0.5


def _session_labels(pose_name: str) -> LabelRecord:
    risk = {
        "standing_still": RiskLabel.STANDING,
        "sitting": RiskLabel.SITTING,
    }.get(pose_name, RiskLabel.BAD_POSTURE)
    return LabelRecord(
        walker_choice=pose_name != "sitting",
        initial_position=(InitialPosition.SITTING if pose_name == "sitting"
                          else InitialPosition.STANDING),
        posture_type=SESSION_VOCABULARY.id_of(pose_name),
        risk_label=risk,
    )


def generate_session(script: Sequence[tuple[str, float]] = DEFAULT_SESSION_SCRIPT,
                     fps: float = 10.0,
                     noise: NoiseModel = NoiseModel(),
                     seed: Optional[int] = None,
                     participant_id: str = "session") -> Dataset:
    """Scripted pose session with 0.5 s linear blends between poses.

    Transition frames take the destination pose's label and grip state, so
    every classifier is slightly penalized at boundaries, mirroring real
    session ambiguity.  The returned dataset uses the 8-name session
    vocabulary; per-frame ground truth is in the labels.
    """
    seed = noise.seed if seed is None else seed
    rng = np.random.default_rng((seed, 0))
    for pose_name, duration in script:
        if pose_name not in TEMPLATES or pose_name not in SESSION_VOCABULARY.names:
            raise GeneratorError(f"unknown session pose {pose_name!r}")
        if duration <= 0:
            raise GeneratorError("script durations must be > 0")

    offset = rng.normal(0.0, noise.participant_sigma, (33, 3))
    step_ms = int(round(1000.0 / fps))
    blend_frames = int(round(TRANSITION_S * fps))
    samples = []
    ts = 0
    prev_coords: Optional[np.ndarray] = None
    for pose_name, duration in script:
        template = TEMPLATES[pose_name]
        labels = _session_labels(pose_name)
        n_frames = int(round(duration * fps))
        for k in range(n_frames):
            if prev_coords is not None and k < blend_frames:
                alpha = (k + 1) / blend_frames
                coords = (1.0 - alpha) * prev_coords + alpha * template.coords
            else:
                coords = template.coords
            if noise.jitter_sigma > 0:
                coords = coords + offset + rng.normal(0.0, noise.jitter_sigma, (33, 3))
            elif noise.participant_sigma > 0:
                coords = coords + offset
            frame = frame_from_arrays(coords, np.ones(33), timestamp_ms=ts,
                                      participant_id=participant_id,
                                      view=View.FULL_BODY, fsr=template.fsr)
            samples.append((frame, labels))
            ts += step_ms
        prev_coords = template.coords
    provenance = {
        "source": "walkerpose.synth.session",
        "seed": seed,
        "fps": fps,
        "script": [[name, duration] for name, duration in script],
    }
    return Dataset(tuple(samples), SESSION_VOCABULARY, provenance)


def session_truth(dataset: Dataset) -> list[str]:
    """Per-frame ground-truth pose names of a generated session."""
    return [dataset.vocabulary.name_of(rec.posture_type) for _, rec in dataset.samples]


def write_session_truth_csv(dataset: Dataset, path) -> None:
    """Parallel ground-truth CSV: frame index, true pose name."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,pose\n")
        for i, name in enumerate(session_truth(dataset)):
            fh.write(f"{i},{name}\n")
