"""Extraction of the 48 engineered pose features.

The catalogue is 24 torso-length-normalized inter-joint distances followed
by 24 joint/segment angles (radians).  It is index-stable: feature i always
means the same thing, and docs/features.md documents every entry.  All
features depend only on relative geometry, so a rigid translation of the
frame leaves the vector unchanged, and uniform scaling leaves the distance
features unchanged.

Image coordinates grow downward, so the image "up" direction is -y.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .pose import (
    DERIVED_POINTS,
    N_LANDMARKS,
    Dataset,
    LandmarkFrame,
    PointRef,
    Topology as T,
    validate_frame,
)

N_FEATURES = 48
N_DISTANCE_FEATURES = 24

DEFAULT_V_MIN = 0.5
DEFAULT_EPS = 1e-6

UP_3D = np.array([0.0, -1.0, 0.0])

# Projection planes for signed angles: which coordinate components survive.
_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


class FeatureError(Exception):
    pass


class DegeneratePoseError(FeatureError):
    """Torso length collapsed below eps; no feature can be normalized."""


class DegenerateAngleError(FeatureError):
    """An angle operand has (near-)zero length."""


class StructuralError(FeatureError):
    """Frame fails the structural invariants checked by validate_frame."""


@dataclass(frozen=True)
class FeatureDef:
    """One catalogue entry.

    kind:
      distance       -- |p0 - p1| / torso_length
      joint_angle    -- interior angle at p1 of the (p0, p1, p2) chain
      segment_angle  -- unsigned angle of the p0 -> p1 vector vs image up
      signed_ref     -- signed 2-D angle from `ref` to the projected
                        p0 -> p1 vector, in `plane`
      signed_pair    -- signed 2-D angle from the projected p0 -> p1 vector
                        to the projected p2 -> p3 vector, in `plane`
    """

    name: str
    kind: str
    points: tuple[PointRef, ...]
    plane: Optional[str] = None
    ref: Optional[tuple[float, float]] = None

    def constituents(self) -> tuple[int, ...]:
        """Real landmark indices this feature depends on."""
        out: list[int] = []
        for p in self.points:
            if isinstance(p, str):
                out.extend(DERIVED_POINTS[p])
            else:
                out.append(p)
        return tuple(sorted(set(out)))


def _dist(name, a, b) -> FeatureDef:
    return FeatureDef(name, "distance", (a, b))


def _joint(name, a, b, c) -> FeatureDef:
    return FeatureDef(name, "joint_angle", (a, b, c))


def _seg(name, a, b) -> FeatureDef:
    return FeatureDef(name, "segment_angle", (a, b))


_UP_XY = (0.0, -1.0)   # image up projected on the x-y plane
_UP_YZ = (-1.0, 0.0)   # image up projected on the y-z plane
_X_AXIS = (1.0, 0.0)

DEFAULT_CATALOGUE: tuple[FeatureDef, ...] = (
    # -- distances 1..24 (torso-normalized) --
    _dist("wrist_shoulder_l", T.LEFT_WRIST, T.LEFT_SHOULDER),
    _dist("wrist_shoulder_r", T.RIGHT_WRIST, T.RIGHT_SHOULDER),
    _dist("wrist_hip_l", T.LEFT_WRIST, T.LEFT_HIP),
    _dist("wrist_hip_r", T.RIGHT_WRIST, T.RIGHT_HIP),
    _dist("wrist_wrist", T.LEFT_WRIST, T.RIGHT_WRIST),
    _dist("elbow_hip_l", T.LEFT_ELBOW, T.LEFT_HIP),
    _dist("elbow_hip_r", T.RIGHT_ELBOW, T.RIGHT_HIP),
    _dist("nose_mid_shoulder", T.NOSE, "mid_shoulder"),
    _dist("nose_mid_hip", T.NOSE, "mid_hip"),
    _dist("shoulder_shoulder", T.LEFT_SHOULDER, T.RIGHT_SHOULDER),
    _dist("hip_hip", T.LEFT_HIP, T.RIGHT_HIP),
    _dist("ankle_hip_l", T.LEFT_ANKLE, T.LEFT_HIP),
    _dist("ankle_hip_r", T.RIGHT_ANKLE, T.RIGHT_HIP),
    _dist("knee_knee", T.LEFT_KNEE, T.RIGHT_KNEE),
    _dist("ankle_ankle", T.LEFT_ANKLE, T.RIGHT_ANKLE),
    _dist("nose_wrist_l", T.NOSE, T.LEFT_WRIST),
    _dist("nose_wrist_r", T.NOSE, T.RIGHT_WRIST),
    _dist("ear_shoulder_l", T.LEFT_EAR, T.LEFT_SHOULDER),
    _dist("ear_shoulder_r", T.RIGHT_EAR, T.RIGHT_SHOULDER),
    _dist("wrist_knee_l", T.LEFT_WRIST, T.LEFT_KNEE),
    _dist("wrist_knee_r", T.RIGHT_WRIST, T.RIGHT_KNEE),
    _dist("shoulder_l_hip_r", T.LEFT_SHOULDER, T.RIGHT_HIP),
    _dist("shoulder_r_hip_l", T.RIGHT_SHOULDER, T.LEFT_HIP),
    _dist("mid_shoulder_mid_ankle", "mid_shoulder", "mid_ankle"),
    # -- angles 25..48 (radians) --
    _joint("elbow_angle_l", T.LEFT_SHOULDER, T.LEFT_ELBOW, T.LEFT_WRIST),
    _joint("elbow_angle_r", T.RIGHT_SHOULDER, T.RIGHT_ELBOW, T.RIGHT_WRIST),
    _joint("shoulder_angle_l", T.LEFT_ELBOW, T.LEFT_SHOULDER, T.LEFT_HIP),
    _joint("shoulder_angle_r", T.RIGHT_ELBOW, T.RIGHT_SHOULDER, T.RIGHT_HIP),
    _joint("hip_angle_l", T.LEFT_SHOULDER, T.LEFT_HIP, T.LEFT_KNEE),
    _joint("hip_angle_r", T.RIGHT_SHOULDER, T.RIGHT_HIP, T.RIGHT_KNEE),
    _joint("knee_angle_l", T.LEFT_HIP, T.LEFT_KNEE, T.LEFT_ANKLE),
    _joint("knee_angle_r", T.RIGHT_HIP, T.RIGHT_KNEE, T.RIGHT_ANKLE),
    _joint("neck_angle", T.NOSE, "mid_shoulder", "mid_hip"),
    FeatureDef("trunk_pitch", "signed_ref", ("mid_hip", "mid_shoulder"), "yz", _UP_YZ),
    FeatureDef("trunk_roll", "signed_ref", ("mid_hip", "mid_shoulder"), "xy", _UP_XY),
    FeatureDef("trunk_twist", "signed_pair",
               (T.RIGHT_HIP, T.LEFT_HIP, T.RIGHT_SHOULDER, T.LEFT_SHOULDER), "xz"),
    FeatureDef("head_tilt", "signed_ref", (T.LEFT_EAR, T.RIGHT_EAR), "xy", _X_AXIS),
    _seg("wrist_elevation_l", T.LEFT_SHOULDER, T.LEFT_WRIST),
    _seg("wrist_elevation_r", T.RIGHT_SHOULDER, T.RIGHT_WRIST),
    _seg("forearm_orient_l", T.LEFT_ELBOW, T.LEFT_WRIST),
    _seg("forearm_orient_r", T.RIGHT_ELBOW, T.RIGHT_WRIST),
    _seg("upper_arm_orient_l", T.LEFT_SHOULDER, T.LEFT_ELBOW),
    _seg("upper_arm_orient_r", T.RIGHT_SHOULDER, T.RIGHT_ELBOW),
    _seg("thigh_orient_l", T.LEFT_HIP, T.LEFT_KNEE),
    _seg("thigh_orient_r", T.RIGHT_HIP, T.RIGHT_KNEE),
    _seg("shin_orient_l", T.LEFT_KNEE, T.LEFT_ANKLE),
    _seg("shin_orient_r", T.RIGHT_KNEE, T.RIGHT_ANKLE),
    _seg("gaze_proxy", "mid_ear", T.NOSE),
)

assert len(DEFAULT_CATALOGUE) == N_FEATURES


@dataclass(frozen=True)
class FeatureSpec:
    catalogue: tuple[FeatureDef, ...] = DEFAULT_CATALOGUE
    v_min: float = DEFAULT_V_MIN
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if len(self.catalogue) != N_FEATURES:
            raise FeatureError(f"catalogue must have {N_FEATURES} entries")

    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.catalogue)


DEFAULT_FEATURE_SPEC = FeatureSpec()


@dataclass(frozen=True)
class FeatureVector:
    """48 feature values plus a per-feature validity mask.

    Invalid entries (a constituent landmark below the visibility threshold,
    or degenerate geometry) carry the sentinel value 0.0.
    """

    values: np.ndarray  # (48,) float64
    valid: np.ndarray   # (48,) bool


def angle(a: np.ndarray, b: np.ndarray, c: np.ndarray, eps: float = DEFAULT_EPS) -> float:
    """Interior angle at b between the b->a and b->c arms, in [0, pi]."""
    u = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    v = np.asarray(c, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= eps or nv <= eps:
        raise DegenerateAngleError(f"arm length below {eps}")
    cosang = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
    return float(np.arccos(cosang))


def signed_angle_2d(u: Sequence[float], v: Sequence[float], eps: float = DEFAULT_EPS) -> float:
    """Counterclockwise angle from u to v in (-pi, pi]."""
    ux, uy = float(u[0]), float(u[1])
    vx, vy = float(v[0]), float(v[1])
    if np.hypot(ux, uy) <= eps or np.hypot(vx, vy) <= eps:
        raise DegenerateAngleError(f"projected vector norm below {eps}")
    out = float(np.arctan2(ux * vy - uy * vx, ux * vx + uy * vy))
    return np.pi if out == -np.pi else out


def torso_length(frame: LandmarkFrame, v_min: float = DEFAULT_V_MIN,
                 eps: float = DEFAULT_EPS) -> float:
    """Distance from the shoulder midpoint to the hip midpoint.

    This is the scale normalizer for every distance feature and for the
    geometric classifier's deviations.
    """
    coords = frame.coords()
    vis = frame.visibilities()
    torso, ok = _torso_batch(coords[None], vis[None], v_min, eps)
    if not ok[0]:
        raise DegeneratePoseError(
            "torso constituents below visibility threshold or torso length below eps"
        )
    return float(torso[0])


# --- vectorized batch core --------------------------------------------------

_TORSO_CONSTITUENTS = (T.LEFT_SHOULDER, T.RIGHT_SHOULDER, T.LEFT_HIP, T.RIGHT_HIP)


def _resolve(coords: np.ndarray, ref: PointRef) -> np.ndarray:
    """(n, 33, 3) coords + point ref -> (n, 3) positions."""
    if isinstance(ref, str):
        a, b = DERIVED_POINTS[ref]
        return (coords[:, a, :] + coords[:, b, :]) / 2.0
    return coords[:, ref, :]


def _torso_batch(coords, vis, v_min, eps):
    mid_sh = (coords[:, T.LEFT_SHOULDER] + coords[:, T.RIGHT_SHOULDER]) / 2.0
    mid_hip = (coords[:, T.LEFT_HIP] + coords[:, T.RIGHT_HIP]) / 2.0
    torso = np.linalg.norm(mid_sh - mid_hip, axis=1)
    vis_ok = np.all(vis[:, list(_TORSO_CONSTITUENTS)] >= v_min, axis=1)
    return torso, vis_ok & (torso > eps)


def _extract_batch(coords: np.ndarray, vis: np.ndarray, spec: FeatureSpec):
    """Core extraction: (n,33,3) + (n,33) -> values (n,48), valid (n,48), torso_ok (n,)."""
    n = coords.shape[0]
    values = np.zeros((n, N_FEATURES), dtype=np.float64)
    valid = np.zeros((n, N_FEATURES), dtype=bool)
    torso, torso_ok = _torso_batch(coords, vis, spec.v_min, spec.eps)
    safe_torso = np.where(torso_ok, torso, 1.0)

    for j, fdef in enumerate(spec.catalogue):
        vis_ok = np.all(vis[:, list(fdef.constituents())] >= spec.v_min, axis=1)
        if fdef.kind == "distance":
            p0 = _resolve(coords, fdef.points[0])
            p1 = _resolve(coords, fdef.points[1])
            val = np.linalg.norm(p0 - p1, axis=1) / safe_torso
            ok = vis_ok & torso_ok
        elif fdef.kind == "joint_angle":
            a = _resolve(coords, fdef.points[0])
            b = _resolve(coords, fdef.points[1])
            c = _resolve(coords, fdef.points[2])
            u, v = a - b, c - b
            nu = np.linalg.norm(u, axis=1)
            nv = np.linalg.norm(v, axis=1)
            ok = vis_ok & (nu > spec.eps) & (nv > spec.eps)
            denom = np.where(ok, nu * nv, 1.0)
            cosang = np.clip(np.sum(u * v, axis=1) / denom, -1.0, 1.0)
            val = np.arccos(cosang)
        elif fdef.kind == "segment_angle":
            a = _resolve(coords, fdef.points[0])
            b = _resolve(coords, fdef.points[1])
            u = b - a
            nu = np.linalg.norm(u, axis=1)
            ok = vis_ok & (nu > spec.eps)
            denom = np.where(ok, nu, 1.0)
            cosang = np.clip(u @ UP_3D / denom, -1.0, 1.0)
            val = np.arccos(cosang)
        elif fdef.kind == "signed_ref":
            ax = _PLANES[fdef.plane]
            a = _resolve(coords, fdef.points[0])
            b = _resolve(coords, fdef.points[1])
            v2 = (b - a)[:, ax]
            ok = vis_ok & (np.hypot(v2[:, 0], v2[:, 1]) > spec.eps)
            rx, ry = fdef.ref
            val = np.arctan2(rx * v2[:, 1] - ry * v2[:, 0],
                             rx * v2[:, 0] + ry * v2[:, 1])
            val = np.where(val == -np.pi, np.pi, val)
        elif fdef.kind == "signed_pair":
            ax = _PLANES[fdef.plane]
            u2 = (_resolve(coords, fdef.points[1]) - _resolve(coords, fdef.points[0]))[:, ax]
            v2 = (_resolve(coords, fdef.points[3]) - _resolve(coords, fdef.points[2]))[:, ax]
            ok = (vis_ok
                  & (np.hypot(u2[:, 0], u2[:, 1]) > spec.eps)
                  & (np.hypot(v2[:, 0], v2[:, 1]) > spec.eps))
            val = np.arctan2(u2[:, 0] * v2[:, 1] - u2[:, 1] * v2[:, 0],
                             u2[:, 0] * v2[:, 0] + u2[:, 1] * v2[:, 1])
            val = np.where(val == -np.pi, np.pi, val)
        else:  # pragma: no cover - catalogue is validated
            raise FeatureError(f"unknown feature kind {fdef.kind!r}")
        values[:, j] = np.where(ok, val, 0.0)
        valid[:, j] = ok
    return values, valid, torso_ok


def extract_features(frame: LandmarkFrame, spec: FeatureSpec = DEFAULT_FEATURE_SPEC) -> FeatureVector:
    """Extract the 48-entry FeatureVector from one frame.

    Raises StructuralError if the frame fails validate_frame and
    DegeneratePoseError if the torso normalizer collapses.
    """
    result = validate_frame(frame)
    if not result.ok:
        raise StructuralError("; ".join(result.violations))
    coords = frame.coords()[None]
    vis = frame.visibilities()[None]
    values, valid, torso_ok = _extract_batch(coords, vis, spec)
    if not torso_ok[0]:
        raise DegeneratePoseError("degenerate torso (occluded or zero length)")
    return FeatureVector(values[0], valid[0])


@dataclass(frozen=True)
class BatchResult:
    values: np.ndarray          # (n, 48)
    valid: np.ndarray           # (n, 48) bool
    errors: tuple[tuple[int, str], ...] = ()  # (sample index, message)


def batch_extract(dataset: Dataset, spec: FeatureSpec = DEFAULT_FEATURE_SPEC) -> BatchResult:
    """Extract features for every sample; failed rows are reported, not dropped.

    Rows with errors keep all-zero values and an all-false validity mask.
    """
    n = len(dataset)
    if n == 0:
        return BatchResult(np.zeros((0, N_FEATURES)), np.zeros((0, N_FEATURES), dtype=bool))
    errors: list[tuple[int, str]] = []
    coords = np.zeros((n, N_LANDMARKS, 3), dtype=np.float64)
    vis = np.zeros((n, N_LANDMARKS), dtype=np.float64)
    structural_bad = np.zeros(n, dtype=bool)
    for i, (frame, _) in enumerate(dataset.samples):
        check = validate_frame(frame)
        if not check.ok:
            structural_bad[i] = True
            errors.append((i, "structural: " + "; ".join(check.violations)))
            continue
        coords[i] = frame.coords()
        vis[i] = frame.visibilities()
    values, valid, torso_ok = _extract_batch(coords, vis, spec)
    for i in np.nonzero(~torso_ok & ~structural_bad)[0]:
        errors.append((int(i), "degenerate torso"))
    bad = structural_bad | ~torso_ok
    values[bad] = 0.0
    valid[bad] = False
    return BatchResult(values, valid, tuple(sorted(errors)))


def with_missing(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Feature matrix with NaN where invalid (tree models learn a default direction)."""
    out = values.copy()
    out[~valid] = np.nan
    return out


# --- CSV interop -------------------------------------------------------------

CSV_HEADER = (
    [f"f{i:02d}" for i in range(1, N_FEATURES + 1)]
    + [f"v{i:02d}" for i in range(1, N_FEATURES + 1)]
    + ["walker", "init", "posture"]
)

# init column: 0 = sitting, 1 = standing
_INIT_TO_INT = {"sitting": 0, "standing": 1}
_INT_TO_INIT = {v: k for k, v in _INIT_TO_INT.items()}


def write_feature_csv(path, values: np.ndarray, valid: np.ndarray,
                      walker: np.ndarray, init: np.ndarray, posture: np.ndarray) -> None:
    """Export the feature matrix with label columns for external tooling."""
    n = values.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(n):
            row = [repr(float(v)) for v in values[i]]
            row += [str(int(v)) for v in valid[i]]
            row += [str(int(walker[i])), str(int(init[i])), str(int(posture[i]))]
            writer.writerow(row)


def read_feature_csv(path):
    """Parse a feature CSV back into (values, valid, walker, init, posture)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise FeatureError("unexpected feature CSV header")
        rows = list(reader)
    n = len(rows)
    values = np.zeros((n, N_FEATURES))
    valid = np.zeros((n, N_FEATURES), dtype=bool)
    walker = np.zeros(n, dtype=np.int64)
    init = np.zeros(n, dtype=np.int64)
    posture = np.zeros(n, dtype=np.int64)
    for i, row in enumerate(rows):
        values[i] = [float(v) for v in row[:N_FEATURES]]
        valid[i] = [bool(int(v)) for v in row[N_FEATURES:2 * N_FEATURES]]
        walker[i], init[i], posture[i] = int(row[-3]), int(row[-2]), int(row[-1])
    return values, valid, walker, init, posture
