"""Local orientation frames: estimators, sign states and invariances."""
from __future__ import annotations

import numpy as np
import pytest

from conftest import gaussian_blob, negated
from volkey.errors import AmbiguousFrameError, NoOrientationError
from volkey.frames import (
    STATE_SIGNS,
    Frame,
    enumerate_states,
    estimate_frame_max_gradient,
    estimate_frame_structure_tensor,
    frame_from_tensor,
    icosphere_faces,
)
from volkey.keypoints import Keypoint, detect_keypoints
from volkey.transforms import SimilarityTransform, is_rotation, rotation_z
from volkey.volume import ScalarVolume, build_scale_space, resample

#: worst-case angular resolution of the 320-face direction grid plus the
#: half-degree circle refinement, with headroom for interpolation noise
COARSE_DEG = 12.0


def _angle_deg(u, v):
    return float(np.degrees(np.arccos(np.clip(abs(float(u @ v)), -1.0, 1.0))))


def _aniso_setup():
    blob = gaussian_blob(widths=(2.0, 4.0, 8.0), center=(32.0, 32.0, 32.0))
    ss = build_scale_space(blob, num_octaves=3)
    return blob, ss, detect_keypoints(ss)[0]


def test_icosphere_face_grid():
    faces = icosphere_faces()
    assert faces.shape == (320, 3)
    np.testing.assert_allclose(np.linalg.norm(faces, axis=1), 1.0, atol=1e-12)
    # the grid is antipodally symmetric, which the sign logic relies on
    matched = np.isclose(np.abs(faces @ faces.T), 1.0, atol=1e-12).sum(axis=1)
    assert np.all(matched == 2)


def test_max_gradient_aligns_with_ramp():
    ax = np.arange(48.0)
    data = np.broadcast_to(ax[:, None, None], (48, 48, 48)).copy()
    vol = ScalarVolume((48, 48, 48), (1, 1, 1), (0, 0, 0), data)
    ss = build_scale_space(vol, num_octaves=2)
    kp = Keypoint(x=np.array([24.0, 24.0, 24.0]), sigma=2.0, sign=1, response=1.0)
    frame = estimate_frame_max_gradient(ss, kp)
    assert _angle_deg(frame.theta1, np.array([1.0, 0.0, 0.0])) < COARSE_DEG
    # every gradient points along +x, so the disambiguated sign does too
    assert frame.theta1[0] > 0.0


def test_estimators_on_anisotropic_blob():
    _, ss, kp = _aniso_setup()
    eye = np.eye(3)
    mg = estimate_frame_max_gradient(ss, kp)
    # steepest intensity change is along the narrowest blob axis
    assert _angle_deg(mg.theta1, eye[0]) < COARSE_DEG
    st = estimate_frame_structure_tensor(ss, kp)
    for i in range(3):
        assert _angle_deg(st.matrix[:, i], eye[i]) < 5.0


def test_rotation_covariance_of_estimators():
    blob, ss, kp = _aniso_setup()
    mg = estimate_frame_max_gradient(ss, kp)
    st = estimate_frame_structure_tensor(ss, kp)
    r = rotation_z(np.radians(20.0))
    c = np.array([31.5, 31.5, 31.5])
    t = SimilarityTransform(rotation=r, translation=c - r @ c)
    ss_rot = build_scale_space(resample(blob, t), num_octaves=3)
    kp_rot = detect_keypoints(ss_rot)[0]
    np.testing.assert_allclose(kp_rot.x, t.apply(kp.x), atol=0.5)
    mg_rot = estimate_frame_max_gradient(ss_rot, kp_rot)
    st_rot = estimate_frame_structure_tensor(ss_rot, kp_rot)
    for i in range(3):
        assert _angle_deg(mg_rot.matrix[:, i], (r @ mg.matrix)[:, i]) < 15.0
        assert _angle_deg(st_rot.matrix[:, i], (r @ st.matrix)[:, i]) < 5.0


def test_frame_from_tensor_axis_aligned():
    frame = frame_from_tensor(np.diag([9.0, 4.0, 1.0]))
    np.testing.assert_array_equal(frame.matrix, np.eye(3))


def test_frame_from_tensor_recovers_rotated_basis():
    rng = np.random.default_rng(3)
    from volkey.transforms import matrix_from_rotvec

    for _ in range(20):
        r = matrix_from_rotvec(rng.normal(size=3))
        tensor = r @ np.diag([9.0, 4.0, 1.0]) @ r.T
        frame = frame_from_tensor(tensor)
        assert is_rotation(frame.matrix, tol=1e-9)
        for i in range(3):
            assert _angle_deg(frame.matrix[:, i], r[:, i]) < 1e-5
        # canonical sign: largest component of the two leading axes positive
        for i in range(2):
            col = frame.matrix[:, i]
            assert col[int(np.argmax(np.abs(col)))] > 0.0


def test_frame_from_tensor_rejects_degenerate_spectra():
    with pytest.raises(AmbiguousFrameError):
        frame_from_tensor(np.diag([4.0, 4.0, 1.0]))
    with pytest.raises(NoOrientationError):
        frame_from_tensor(np.zeros((3, 3)))


def test_isotropic_blob_has_no_tensor_frame():
    blob = gaussian_blob(widths=4.0, center=(32.0, 32.0, 32.0))
    ss = build_scale_space(blob, num_octaves=3)
    kp = detect_keypoints(ss)[0]
    with pytest.raises(AmbiguousFrameError):
        estimate_frame_structure_tensor(ss, kp)


def test_constant_volume_has_no_orientation():
    vol = ScalarVolume((16, 16, 16), (1, 1, 1), (0, 0, 0), np.ones((16, 16, 16)))
    ss = build_scale_space(vol, num_octaves=1)
    kp = Keypoint(x=np.array([8.0, 8.0, 8.0]), sigma=2.0, sign=1, response=1.0)
    with pytest.raises(NoOrientationError):
        estimate_frame_max_gradient(ss, kp)
    with pytest.raises(NoOrientationError):
        estimate_frame_structure_tensor(ss, kp)


def test_enumerate_states_signs_and_handedness():
    states = enumerate_states(Frame(np.eye(3)))
    assert [s.index for s in states] == [0, 1, 2, 3]
    np.testing.assert_array_equal(states[0].frame.matrix, np.eye(3))
    for k, state in enumerate(states):
        np.testing.assert_array_equal(state.frame.matrix, STATE_SIGNS[k])
        assert np.linalg.det(state.frame.matrix) == pytest.approx(1.0)
    rng = np.random.default_rng(4)
    from volkey.transforms import matrix_from_rotvec

    base = Frame(matrix_from_rotvec(rng.normal(size=3)))
    for k, state in enumerate(enumerate_states(base)):
        np.testing.assert_array_equal(state.frame.matrix, base.matrix @ STATE_SIGNS[k])
        assert is_rotation(state.frame.matrix, tol=1e-9)


def test_state_set_closed_under_composition():
    # the four sign matrices form a group, so relabeling states permutes them
    mats = [np.diag(np.diag(s)) for s in STATE_SIGNS]
    for a in mats:
        for b in mats:
            prod = a @ b
            assert any(np.array_equal(prod, m) for m in mats)


def test_phantom_frames_are_rotations(phantom_features):
    assert len(phantom_features) >= 30
    for feat in phantom_features:
        assert is_rotation(feat.frame.matrix, tol=1e-9)
        for state in enumerate_states(feat.frame):
            assert np.linalg.det(state.frame.matrix) > 0.0


def test_structure_tensor_negation_invariance():
    blob, ss, kp = _aniso_setup()
    ss_neg = build_scale_space(negated(blob), num_octaves=3)
    pos = estimate_frame_structure_tensor(ss, kp)
    neg = estimate_frame_structure_tensor(ss_neg, kp)
    np.testing.assert_array_equal(pos.matrix, neg.matrix)


def test_max_gradient_negation_lands_on_parity_state(phantom, phantom_scale_space, phantom_features):
    # flipping contrast negates theta1 and theta2 while preserving theta3,
    # which is exactly state 3 of the original frame
    ss_neg = build_scale_space(negated(phantom), num_octaves=3)
    s3 = STATE_SIGNS[3]
    for feat in phantom_features:
        neg = estimate_frame_max_gradient(ss_neg, feat.keypoint)
        np.testing.assert_allclose(neg.matrix, feat.frame.matrix @ s3, atol=1e-9)
