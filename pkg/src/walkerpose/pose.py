"""Canonical data types for 33-landmark pose frames, labels and datasets.

Everything downstream (feature extraction, classifiers, the streaming
service) consumes these types. All of them are immutable after
construction and safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

N_LANDMARKS = 33


class Topology:
    """Index constants for the upstream detector's fixed 33-landmark order."""

    NOSE = 0
    LEFT_EYE_INNER = 1
    LEFT_EYE = 2
    LEFT_EYE_OUTER = 3
    RIGHT_EYE_INNER = 4
    RIGHT_EYE = 5
    RIGHT_EYE_OUTER = 6
    LEFT_EAR = 7
    RIGHT_EAR = 8
    MOUTH_LEFT = 9
    MOUTH_RIGHT = 10
    LEFT_SHOULDER = 11
    RIGHT_SHOULDER = 12
    LEFT_ELBOW = 13
    RIGHT_ELBOW = 14
    LEFT_WRIST = 15
    RIGHT_WRIST = 16
    LEFT_PINKY = 17
    RIGHT_PINKY = 18
    LEFT_INDEX = 19
    RIGHT_INDEX = 20
    LEFT_THUMB = 21
    RIGHT_THUMB = 22
    LEFT_HIP = 23
    RIGHT_HIP = 24
    LEFT_KNEE = 25
    RIGHT_KNEE = 26
    LEFT_ANKLE = 27
    RIGHT_ANKLE = 28
    LEFT_HEEL = 29
    RIGHT_HEEL = 30
    LEFT_FOOT_INDEX = 31
    RIGHT_FOOT_INDEX = 32

    # (left index, right index) for every lateralized landmark.
    LEFT_RIGHT_PAIRS = (
        (1, 4), (2, 5), (3, 6), (7, 8), (9, 10), (11, 12), (13, 14),
        (15, 16), (17, 18), (19, 20), (21, 22), (23, 24), (25, 26),
        (27, 28), (29, 30), (31, 32),
    )

    NAMES = (
        "nose", "left_eye_inner", "left_eye", "left_eye_outer",
        "right_eye_inner", "right_eye", "right_eye_outer",
        "left_ear", "right_ear", "mouth_left", "mouth_right",
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
        "left_wrist", "right_wrist", "left_pinky", "right_pinky",
        "left_index", "right_index", "left_thumb", "right_thumb",
        "left_hip", "right_hip", "left_knee", "right_knee",
        "left_ankle", "right_ankle", "left_heel", "right_heel",
        "left_foot_index", "right_foot_index",
    )


# Derived points are midpoints of two landmarks; keys are the public
# specifier names accepted by derived_point().
DERIVED_POINTS: dict[str, tuple[int, int]] = {
    "mid_shoulder": (Topology.LEFT_SHOULDER, Topology.RIGHT_SHOULDER),
    "mid_hip": (Topology.LEFT_HIP, Topology.RIGHT_HIP),
    "mid_ear": (Topology.LEFT_EAR, Topology.RIGHT_EAR),
    "mid_ankle": (Topology.LEFT_ANKLE, Topology.RIGHT_ANKLE),
}

# A point reference is either a landmark index or a derived-point name.
PointRef = Union[int, str]


class View(str, Enum):
    FULL_BODY = "full_body"
    UPPER_BODY = "upper_body"


class InitialPosition(str, Enum):
    SITTING = "sitting"
    STANDING = "standing"


class RiskLabel(str, Enum):
    STANDING = "standing"
    SITTING = "sitting"
    BAD_POSTURE = "bad_posture"


class PoseError(Exception):
    """Base class for pose-domain errors."""


class SpecifierError(PoseError):
    """Unknown landmark / derived-point specifier."""


class DatasetFormatError(PoseError):
    """Malformed dataset file; carries a 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class Landmark:
    """One detector keypoint in normalized image space.

    x, y are typically in [0, 1]; z is unbounded (negative towards the
    camera); visibility is a confidence in [0, 1].
    """

    x: float
    y: float
    z: float
    visibility: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class LandmarkFrame:
    """One timestamped pose observation: 33 landmarks + optional grip FSRs."""

    timestamp_ms: int
    participant_id: str
    view: View
    landmarks: tuple[Landmark, ...]
    fsr: Optional[tuple[float, float]] = None  # (left, right), normalized [0,1]

    def coords(self) -> np.ndarray:
        """(33, 3) float64 array of x, y, z."""
        return np.array([(l.x, l.y, l.z) for l in self.landmarks], dtype=np.float64)

    def visibilities(self) -> np.ndarray:
        """(33,) float64 array of visibility confidences."""
        return np.array([l.visibility for l in self.landmarks], dtype=np.float64)


@dataclass(frozen=True)
class LabelVocabulary:
    """Bijective id <-> name mapping for posture classes."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise PoseError("vocabulary names must be unique")
        if any(not n for n in self.names):
            raise PoseError("vocabulary names must be non-empty")

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PoseError(f"unknown class name {name!r}") from None

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise PoseError(f"class id {class_id} out of range")
        return self.names[class_id]


# Stand-in 17-class vocabulary; the true class list is data, so any other
# 17-name set loads without code changes.
DEFAULT_VOCABULARY = LabelVocabulary((
    "standing", "sitting", "sit_to_stand", "stand_to_sit",
    "lean_forward", "lean_backward", "lean_left", "lean_right",
    "twist_left", "twist_right",
    "raise_left_arm", "raise_right_arm", "raise_both_arms",
    "elbow_fold_left", "elbow_fold_right",
    "head_down", "head_up",
))


@dataclass(frozen=True)
class LabelRecord:
    """Ground-truth labels attached to one frame."""

    walker_choice: bool
    initial_position: InitialPosition
    posture_type: int
    risk_label: Optional[RiskLabel] = None


@dataclass(frozen=True)
class Dataset:
    """Ordered (frame, labels) samples plus their vocabulary and provenance."""

    samples: tuple[tuple[LandmarkFrame, LabelRecord], ...]
    vocabulary: LabelVocabulary
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def participants(self) -> tuple[str, ...]:
        return tuple(sorted({f.participant_id for f, _ in self.samples}))

    def validate(self) -> None:
        """Raise PoseError on any sample/vocabulary inconsistency."""
        last_ts: dict[str, int] = {}
        for i, (frame, labels) in enumerate(self.samples):
            if not 0 <= labels.posture_type < len(self.vocabulary):
                raise PoseError(
                    f"sample {i}: posture id {labels.posture_type} not in vocabulary"
                )
            prev = last_ts.get(frame.participant_id)
            if prev is not None and frame.timestamp_ms < prev:
                raise PoseError(
                    f"sample {i}: timestamp decreases within participant "
                    f"{frame.participant_id!r}"
                )
            last_ts[frame.participant_id] = frame.timestamp_ms
        if self.samples and not self.participants():
            raise PoseError("participant id set is empty")


def derived_point(frame: LandmarkFrame, spec: PointRef) -> np.ndarray:
    """Resolve a landmark index or derived-point name to a 3-vector.

    Derived points are arithmetic midpoints of their two constituents.
    """
    if isinstance(spec, (int, np.integer)):
        if not 0 <= spec < N_LANDMARKS:
            raise SpecifierError(f"landmark index {spec} out of range")
        return frame.landmarks[spec].as_array()
    try:
        a, b = DERIVED_POINTS[spec]
    except KeyError:
        raise SpecifierError(f"unknown derived-point specifier {spec!r}") from None
    return (frame.landmarks[a].as_array() + frame.landmarks[b].as_array()) / 2.0


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_frame(frame: LandmarkFrame) -> ValidationResult:
    """Collect every structural violation of the frame invariants.

    A frame that passes here is accepted by every downstream operation.
    """
    violations: list[str] = []
    if len(frame.landmarks) != N_LANDMARKS:
        violations.append(
            f"landmark count is {len(frame.landmarks)}, expected {N_LANDMARKS}"
        )
    for i, lm in enumerate(frame.landmarks):
        if not all(np.isfinite([lm.x, lm.y, lm.z])):
            violations.append(f"landmark {i}: non-finite coordinate")
        if not (np.isfinite(lm.visibility) and 0.0 <= lm.visibility <= 1.0):
            violations.append(f"landmark {i}: visibility {lm.visibility} outside [0, 1]")
    if frame.fsr is not None:
        left, right = frame.fsr
        for side, value in (("left", left), ("right", right)):
            if not (np.isfinite(value) and 0.0 <= value <= 1.0):
                violations.append(f"fsr {side}: value {value} outside [0, 1]")
    return ValidationResult(tuple(violations))


def frame_from_arrays(
    coords: np.ndarray,
    visibility: np.ndarray,
    timestamp_ms: int = 0,
    participant_id: str = "p00",
    view: View = View.FULL_BODY,
    fsr: Optional[tuple[float, float]] = None,
) -> LandmarkFrame:
    """Build a LandmarkFrame from (33, 3) coordinates and (33,) visibility."""
    landmarks = tuple(
        Landmark(float(x), float(y), float(z), float(v))
        for (x, y, z), v in zip(coords, visibility)
    )
    return LandmarkFrame(timestamp_ms, participant_id, view, landmarks, fsr)


# --- NDJSON dataset serialization -----------------------------------------
#
# One JSON object per line.  Header line:
#   {"schema": 1, "vocab": [...names...], "provenance": {...}}
# Sample lines:
#   {"ts": <int>, "pid": "<str>", "view": "full|upper",
#    "lm": [[x, y, z, v] x33], "fsr": [l, r] | null,
#    "labels": {"walker": 0|1, "init": "sitting|standing",
#               "posture": <int>, "risk": "<risk>" | null}}

SCHEMA_VERSION = 1

_VIEW_WIRE = {View.FULL_BODY: "full", View.UPPER_BODY: "upper"}
_WIRE_VIEW = {v: k for k, v in _VIEW_WIRE.items()}


def frame_to_obj(frame: LandmarkFrame) -> dict:
    return {
        "ts": frame.timestamp_ms,
        "pid": frame.participant_id,
        "view": _VIEW_WIRE[frame.view],
        "lm": [[l.x, l.y, l.z, l.visibility] for l in frame.landmarks],
        "fsr": list(frame.fsr) if frame.fsr is not None else None,
    }


def frame_from_obj(obj: dict) -> LandmarkFrame:
    for key in ("ts", "pid", "view", "lm"):
        if key not in obj:
            raise DatasetFormatError(f"missing {key!r} key")
    try:
        view = _WIRE_VIEW[obj["view"]]
    except KeyError:
        raise DatasetFormatError(f"unknown view {obj['view']!r}") from None
    lm = obj["lm"]
    if not isinstance(lm, list) or len(lm) != N_LANDMARKS:
        raise DatasetFormatError(
            f"'lm' must hold {N_LANDMARKS} landmarks, got {len(lm) if isinstance(lm, list) else type(lm).__name__}"
        )
    try:
        landmarks = tuple(Landmark(float(x), float(y), float(z), float(v)) for x, y, z, v in lm)
    except (TypeError, ValueError):
        raise DatasetFormatError("each landmark must be a [x, y, z, v] quadruple") from None
    fsr_raw = obj.get("fsr")
    fsr = None if fsr_raw is None else (float(fsr_raw[0]), float(fsr_raw[1]))
    return LandmarkFrame(int(obj["ts"]), str(obj["pid"]), view, landmarks, fsr)


def _labels_to_obj(labels: LabelRecord) -> dict:
    return {
        "walker": int(labels.walker_choice),
        "init": labels.initial_position.value,
        "posture": labels.posture_type,
        "risk": labels.risk_label.value if labels.risk_label is not None else None,
    }


def _labels_from_obj(obj: dict) -> LabelRecord:
    for key in ("walker", "init", "posture"):
        if key not in obj:
            raise DatasetFormatError(f"missing labels.{key!r} key")
    risk = obj.get("risk")
    return LabelRecord(
        walker_choice=bool(obj["walker"]),
        initial_position=InitialPosition(obj["init"]),
        posture_type=int(obj["posture"]),
        risk_label=RiskLabel(risk) if risk is not None else None,
    )


def write_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as header + one NDJSON sample per line.

    Floats are serialized with repr (shortest round-trip form), so a
    write/read cycle is bit-exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {"schema": SCHEMA_VERSION, "vocab": list(dataset.vocabulary.names)}
        if dataset.provenance:
            header["provenance"] = dataset.provenance
        fh.write(json.dumps(header) + "\n")
        for frame, labels in dataset.samples:
            obj = frame_to_obj(frame)
            obj["labels"] = _labels_to_obj(labels)
            fh.write(json.dumps(obj) + "\n")


def read_dataset(path) -> Dataset:
    """Parse a dataset file; errors carry the offending 1-based line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not any(line.strip() for line in lines):
        raise DatasetFormatError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON: {exc}", line=1) from None
    if not isinstance(header, dict) or "schema" not in header or "vocab" not in header:
        raise DatasetFormatError("header must carry 'schema' and 'vocab'", line=1)
    if header["schema"] != SCHEMA_VERSION:
        raise DatasetFormatError(f"unsupported schema version {header['schema']}", line=1)
    vocabulary = LabelVocabulary(tuple(str(n) for n in header["vocab"]))
    provenance = header.get("provenance", {})

    samples: list[tuple[LandmarkFrame, LabelRecord]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"invalid JSON: {exc}", line=lineno) from None
        try:
            frame = frame_from_obj(obj)
            if "labels" not in obj:
                raise DatasetFormatError("missing 'labels' key")
            labels = _labels_from_obj(obj["labels"])
        except DatasetFormatError as exc:
            raise DatasetFormatError(str(exc), line=lineno) from None
        except ValueError as exc:
            raise DatasetFormatError(str(exc), line=lineno) from None
        if not 0 <= labels.posture_type < len(vocabulary):
            raise DatasetFormatError(
                f"posture id {labels.posture_type} not in vocabulary", line=lineno
            )
        samples.append((frame, labels))
    return Dataset(tuple(samples), vocabulary, provenance)
