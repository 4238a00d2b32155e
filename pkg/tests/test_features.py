import numpy as np
import pytest

from walkerpose import features as feat
from walkerpose.features import (
    DEFAULT_FEATURE_SPEC,
    DegenerateAngleError,
    DegeneratePoseError,
    N_DISTANCE_FEATURES,
    N_FEATURES,
    StructuralError,
    angle,
    batch_extract,
    extract_features,
    read_feature_csv,
    signed_angle_2d,
    torso_length,
    with_missing,
    write_feature_csv,
)
from walkerpose.pose import (
    Dataset, DEFAULT_VOCABULARY, InitialPosition, LabelRecord, LandmarkFrame,
    RiskLabel, Topology as T, View, validate_frame,
)
from walkerpose.synth import LEG_LANDMARKS, TEMPLATES
from conftest import make_frame, dyadic_random_coords


def test_catalogue_shape():
    spec = DEFAULT_FEATURE_SPEC
    assert len(spec.catalogue) == N_FEATURES == 48
    kinds = [d.kind for d in spec.catalogue]
    assert kinds[:N_DISTANCE_FEATURES] == ["distance"] * 24
    assert all(k != "distance" for k in kinds[N_DISTANCE_FEATURES:])
    assert len({d.name for d in spec.catalogue}) == 48


def _coords_with(midsh, midhip):
    coords = np.zeros((33, 3))
    coords[T.LEFT_SHOULDER] = coords[T.RIGHT_SHOULDER] = midsh
    coords[T.LEFT_HIP] = coords[T.RIGHT_HIP] = midhip
    return coords


def test_torso_length_axis_aligned():
    frame = make_frame(_coords_with((0, 0, 0), (0, 0.5, 0)))
    assert torso_length(frame) == pytest.approx(0.5, abs=1e-15)


def test_torso_length_345():
    frame = make_frame(_coords_with((0, 0, 0), (0.3, 0.4, 0)))
    assert torso_length(frame) == pytest.approx(0.5, abs=1e-15)


def test_torso_length_degenerate():
    frame = make_frame(_coords_with((0.2, 0.2, 0.2), (0.2, 0.2, 0.2)))
    with pytest.raises(DegeneratePoseError):
        torso_length(frame)


def test_angle_orthogonal():
    assert angle((1, 0, 0), (0, 0, 0), (0, 1, 0)) == pytest.approx(np.pi / 2)


def test_angle_collinear():
    assert angle((1, 0, 0), (0, 0, 0), (-1, 0, 0)) == pytest.approx(np.pi)


def test_angle_folded():
    assert angle((1, 0, 0), (0, 0, 0), (1, 0, 0)) == pytest.approx(0.0)


def test_angle_degenerate():
    with pytest.raises(DegenerateAngleError):
        angle((0, 0, 0), (0, 0, 0), (1, 0, 0))


def test_signed_angle_quadrants():
    assert signed_angle_2d((1, 0), (0, 1)) == pytest.approx(np.pi / 2)
    assert signed_angle_2d((0.2, 0.7), (0.2, 0.7)) == 0.0
    assert signed_angle_2d((1, 0), (0, -1)) == pytest.approx(-np.pi / 2)
    assert signed_angle_2d((1, 0), (-1, 0)) == pytest.approx(np.pi)  # (-pi, pi]


def test_signed_angle_degenerate():
    with pytest.raises(DegenerateAngleError):
        signed_angle_2d((0, 0), (1, 0))


def test_extract_structural_error():
    frame = make_frame()
    short = LandmarkFrame(0, "p", View.FULL_BODY, frame.landmarks[:32])
    with pytest.raises(StructuralError):
        extract_features(short)


def test_extract_degenerate_torso():
    with pytest.raises(DegeneratePoseError):
        extract_features(make_frame(np.zeros((33, 3))))


def test_translation_invariance_exact():
    # Dyadic-grid coordinates make float cancellation exact, so the feature
    # pipeline's pure-relative-geometry contract is testable bit-for-bit.
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 25:
        coords = dyadic_random_coords(rng)
        t = rng.integers(-2048, 2048, size=3).astype(np.float64) / (1 << 12)
        try:
            base = extract_features(make_frame(coords))
        except DegeneratePoseError:
            continue
        moved = extract_features(make_frame(coords + t))
        assert moved.values.tobytes() == base.values.tobytes()
        assert np.array_equal(moved.valid, base.valid)
        checked += 1


def test_scale_invariance_of_distances():
    rng = np.random.default_rng(12)
    for _ in range(25):
        coords = rng.random((33, 3))
        center = rng.random(3)
        scale = rng.uniform(0.5, 3.0)
        try:
            base = extract_features(make_frame(coords))
        except DegeneratePoseError:
            continue
        scaled = extract_features(make_frame(center + (coords - center) * scale))
        d = slice(0, N_DISTANCE_FEATURES)
        np.testing.assert_allclose(scaled.values[d], base.values[d], rtol=1e-9)


def test_template_scaled_about_mid_hip():
    base = extract_features(make_frame())
    coords = TEMPLATES["standing"].coords
    midhip = (coords[T.LEFT_HIP] + coords[T.RIGHT_HIP]) / 2
    doubled = extract_features(make_frame(midhip + (coords - midhip) * 2.0))
    d = slice(0, N_DISTANCE_FEATURES)
    np.testing.assert_allclose(doubled.values[d], base.values[d], rtol=1e-9)


def test_t_pose_frozen_values():
    # Hand-computed from the template constants: arms straight and level, so
    # both elbow angles are pi; wrists sit 0.73 apart against torso 0.25.
    fv = extract_features(make_frame(TEMPLATES["t_pose"].coords))
    names = DEFAULT_FEATURE_SPEC.names()
    assert fv.valid.all()
    assert fv.values[names.index("elbow_angle_l")] == pytest.approx(np.pi, abs=1e-6)
    assert fv.values[names.index("elbow_angle_r")] == pytest.approx(np.pi, abs=1e-6)
    assert fv.values[names.index("wrist_wrist")] == pytest.approx(0.73 / 0.25, rel=1e-12)


def test_angle_ranges_random_frames():
    rng = np.random.default_rng(13)
    n = 2000
    coords = rng.random((n, 33, 3))
    vis = np.ones((n, 33))
    values, valid, torso_ok = feat._extract_batch(coords, vis, DEFAULT_FEATURE_SPEC)
    names = DEFAULT_FEATURE_SPEC.names()
    signed = [i for i, d in enumerate(DEFAULT_FEATURE_SPEC.catalogue)
              if d.kind in ("signed_ref", "signed_pair")]
    unsigned = [i for i, d in enumerate(DEFAULT_FEATURE_SPEC.catalogue)
                if d.kind in ("joint_angle", "segment_angle")]
    for i in unsigned:
        v = values[valid[:, i], i]
        assert (v >= 0).all() and (v <= np.pi).all(), names[i]
    for i in signed:
        v = values[valid[:, i], i]
        assert (v > -np.pi).all() and (v <= np.pi).all(), names[i]


def test_determinism_bit_identical(standing_frame):
    a = extract_features(standing_frame)
    b = extract_features(standing_frame)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.valid.tobytes() == b.valid.tobytes()


def test_upper_body_leg_features_invalid():
    vis = np.ones(33)
    vis[list(LEG_LANDMARKS)] = 0.0
    fv = extract_features(make_frame(vis=vis, view=View.UPPER_BODY))
    for i, fdef in enumerate(DEFAULT_FEATURE_SPEC.catalogue):
        touches_leg = any(c in LEG_LANDMARKS for c in fdef.constituents())
        assert fv.valid[i] == (not touches_leg), fdef.name
        if touches_leg:
            assert fv.values[i] == 0.0


def _dataset_of(frames):
    labels = LabelRecord(True, InitialPosition.STANDING, 0, RiskLabel.STANDING)
    return Dataset(tuple((f, labels) for f in frames), DEFAULT_VOCABULARY)


def test_batch_empty():
    result = batch_extract(_dataset_of([]))
    assert result.values.shape == (0, 48)
    assert not result.errors


def test_batch_identical_rows(standing_frame):
    result = batch_extract(_dataset_of([standing_frame, standing_frame]))
    assert np.array_equal(result.values[0], result.values[1])
    single = extract_features(standing_frame)
    np.testing.assert_array_equal(result.values[0], single.values)


def test_batch_reports_degenerate_row(standing_frame):
    bad = make_frame(np.zeros((33, 3)))
    result = batch_extract(_dataset_of([standing_frame, bad, standing_frame]))
    assert [i for i, _ in result.errors] == [1]
    assert not result.valid[1].any()
    assert result.valid[0].all() and result.valid[2].all()


def test_with_missing():
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    valid = np.array([[True, False], [True, True]])
    out = with_missing(values, valid)
    assert np.isnan(out[0, 1]) and out[0, 0] == 1.0


def test_feature_csv_round_trip(tmp_path, standing_frame):
    ds = _dataset_of([standing_frame] * 3)
    batch = batch_extract(ds)
    walker = np.array([1, 0, 1])
    init = np.array([0, 1, 1])
    posture = np.array([0, 3, 16])
    path = tmp_path / "features.csv"
    write_feature_csv(path, batch.values, batch.valid, walker, init, posture)
    v2, m2, w2, i2, p2 = read_feature_csv(path)
    assert v2.tobytes() == batch.values.tobytes()  # repr floats round-trip exactly
    assert np.array_equal(m2, batch.valid)
    assert np.array_equal(w2, walker) and np.array_equal(i2, init)
    assert np.array_equal(p2, posture)
    header = path.read_text().splitlines()[0]
    assert header.startswith("f01,f02") and "v01" in header
    assert header.endswith("walker,init,posture")


def test_validate_frame_matches_structural_extract():
    # validate_frame accepts exactly the frames extract_features accepts
    # without a structural error (geometric degeneracy is a separate error)
    rng = np.random.default_rng(99)
    frames = []
    for _ in range(40):
        coords = rng.random((33, 3))
        vis = np.ones(33)
        kind = rng.integers(0, 4)
        if kind == 1:
            coords[rng.integers(33), rng.integers(3)] = np.inf
        elif kind == 2:
            vis[rng.integers(33)] = 1.5
        frame = make_frame(coords, vis)
        if kind == 3:
            frame = LandmarkFrame(0, "p", View.FULL_BODY, frame.landmarks[:30])
        frames.append(frame)
    for frame in frames:
        ok = validate_frame(frame).ok
        try:
            extract_features(frame)
            structural = False
        except StructuralError:
            structural = True
        except DegeneratePoseError:
            structural = False
        assert ok == (not structural)
