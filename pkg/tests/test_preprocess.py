import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelact.errors import ConfigError, DegenerateSkeleton
from skelact.preprocess import (NormalizationConfig, RotationReference, align_shoulders, center,
                                normalize, rigid_transform, scale, shoulder_yaw, torso_lengths,
                                yaw_matrix)
from skelact.skeleton import COMMON, SkeletonSequence

CFG = NormalizationConfig()
SB, NECK = COMMON.index("spine_base"), COMMON.index("neck")
LS, RS = COMMON.index("left_shoulder"), COMMON.index("right_shoulder")


def body(seed, n=6):
    """Random but well-formed body: shoulders spread horizontally, torso upright."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(scale=0.3, size=(n, 15, 3)) + [0.0, 1.0, 3.0]
    pos[:, NECK] = pos[:, SB] + [0.0, 0.5, 0.0] + rng.normal(scale=0.02, size=(n, 3))
    pos[:, LS] = pos[:, NECK] + [-0.2, 0.0, 0.05]
    pos[:, RS] = pos[:, NECK] + [0.2, 0.0, -0.05]
    return SkeletonSequence(COMMON, pos, np.ones((n, 15), bool), np.arange(n) / 30, 30.0, label=1)


def with_joints(**joints):
    pos = np.zeros((1, 15, 3))
    for name, p in joints.items():
        pos[0, COMMON.index(name)] = p
    return SkeletonSequence(COMMON, pos, np.ones((1, 15), bool), [0.0], 30.0)


def test_center_single_frame():
    pos = np.full((1, 15, 3), 2.0)
    pos[0, SB] = 1.0
    seq = SkeletonSequence(COMMON, pos, np.ones((1, 15), bool), [0.0], 30.0)
    out = center(seq)
    np.testing.assert_array_equal(out.positions[0, SB], 0.0)
    np.testing.assert_array_equal(out.positions[0, 0 if SB else 1], 1.0)


def test_center_already_centered():
    seq = center(body(0))
    np.testing.assert_array_equal(center(seq).positions, seq.positions)


def test_center_each_frame_independently():
    pos = np.zeros((2, 15, 3))
    pos[0] = 1.0
    pos[1] = 5.0
    pos[0, SB] = (1, 2, 3)
    pos[1, SB] = (-1, 0, 4)
    out = center(SkeletonSequence(COMMON, pos, np.ones((2, 15), bool), [0, 1], 30))
    np.testing.assert_allclose(out.positions[0, NECK], (0, -1, -2))
    np.testing.assert_allclose(out.positions[1, NECK], (6, 5, 1))


def test_center_never_valid():
    seq = body(0)
    valid = seq.valid.copy()
    valid[:, SB] = False
    with pytest.raises(DegenerateSkeleton):
        center(seq.replace(valid=valid, positions=np.where(valid[..., None], seq.positions, 0)))


def test_scale_ratio():
    seq = with_joints(spine_base=(0, 0, 0), neck=(0, 0.8, 0))
    out = scale(seq)
    assert out.provenance["scale"] == pytest.approx(1.25)
    np.testing.assert_allclose(out.positions[0, NECK], (0, 1.0, 0))


def test_scale_identity_at_reference():
    seq = with_joints(spine_base=(0, 0, 0), neck=(0, 1.0, 0), head=(0.1, 1.2, 0.3))
    out = scale(seq)
    assert out.provenance["scale"] == 1.0
    np.testing.assert_array_equal(out.positions, seq.positions)


def test_scale_degenerate():
    with pytest.raises(DegenerateSkeleton):
        scale(with_joints(spine_base=(0, 1, 0), neck=(0, 1, 0)))


def test_prescaled_sequence_normalizes_identically():
    seq = body(3)
    doubled = seq.replace(positions=seq.positions * 2.0)
    np.testing.assert_allclose(normalize(doubled).positions, normalize(seq).positions, atol=1e-9)


def test_align_identity_case():
    seq = with_joints(left_shoulder=(-0.2, 1.5, 0), right_shoulder=(0.2, 1.5, 0), head=(0, 1.7, 0.1))
    out = align_shoulders(seq)
    assert out.provenance["yaw"] == 0.0
    np.testing.assert_allclose(out.positions, seq.positions, atol=1e-15)


def test_align_sideways():
    seq = with_joints(left_shoulder=(0, 1.5, -0.2), right_shoulder=(0, 1.5, 0.2))
    out = align_shoulders(seq)
    assert out.provenance["yaw"] == pytest.approx(-math.pi / 2)
    v = out.positions[0, RS] - out.positions[0, LS]
    np.testing.assert_allclose(v, (0.4, 0, 0), atol=1e-12)


def test_align_stacked_shoulders():
    seq = with_joints(left_shoulder=(0, 1.2, 0), right_shoulder=(0, 1.5, 0))
    with pytest.raises(DegenerateSkeleton):
        align_shoulders(seq)


def test_yaw_matrix_hand_values():
    r = yaw_matrix(math.pi / 2)
    np.testing.assert_allclose(r @ [1, 0, 0], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(r @ [0, 1, 0], [0, 1, 0])


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_align_fixpoint(seed):
    out = align_shoulders(body(seed))
    assert abs(shoulder_yaw(out, CFG)[0]) < 1e-9


def test_per_frame_rotation_aligns_every_frame():
    cfg = NormalizationConfig(rotation_reference=RotationReference.PER_FRAME)
    seq = body(1)
    turned = np.stack([p @ yaw_matrix(0.3 * i).T for i, p in enumerate(seq.positions)])
    out = align_shoulders(seq.replace(positions=turned), cfg)
    np.testing.assert_allclose(shoulder_yaw(out, cfg), 0, atol=1e-9)


def test_disabled_is_identity():
    seq = body(0)
    assert normalize(seq, NormalizationConfig(enabled=False)) is seq


@given(st.integers(0, 10_000), st.floats(-math.pi, math.pi), st.floats(0.3, 3.0),
       st.tuples(*[st.floats(-5, 5)] * 3))
@settings(max_examples=60, deadline=None)
def test_rigid_invariance(seed, phi, k, tau):
    seq = body(seed)
    moved = rigid_transform(seq, phi, k, tau)
    np.testing.assert_allclose(normalize(moved).positions, normalize(seq).positions, atol=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_rotation_is_isometry(seed):
    seq = center(body(seed))
    out = align_shoulders(seq)
    d0 = np.linalg.norm(seq.positions[:, :, None] - seq.positions[:, None], axis=-1)
    d1 = np.linalg.norm(out.positions[:, :, None] - out.positions[:, None], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_normalize_idempotent_and_scaled(seed):
    once = normalize(body(seed))
    np.testing.assert_allclose(normalize(once).positions, once.positions, atol=1e-9)
    assert torso_lengths(once, CFG).mean() == pytest.approx(1.0, abs=1e-9)


def test_invalid_joints_stay_zero():
    seq = body(2)
    valid = seq.valid.copy()
    valid[2, 5] = False
    pos = np.where(valid[..., None], seq.positions, 0.0)
    out = normalize(seq.replace(positions=pos, valid=valid))
    np.testing.assert_array_equal(out.positions[2, 5], 0.0)
    assert not out.valid[2, 5]


def test_config_checks():
    with pytest.raises(ConfigError, match="reference_torso_length"):
        NormalizationConfig(reference_torso_length=0)
    with pytest.raises(ConfigError, match="center_joint"):
        normalize(body(0), NormalizationConfig(center_joint="tail"))
