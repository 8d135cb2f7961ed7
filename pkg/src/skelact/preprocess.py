"""Deterministic per-sequence normalization: centering, torso-length scaling
and yaw alignment of the shoulder line.

Coordinates are camera-space with ``y`` pointing up. Only valid joints are
transformed; invalid joints stay at the origin.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateSkeleton
from .skeleton import SkeletonSequence

MIN_TORSO = 1e-6
MIN_SHOULDER = 1e-6


class RotationReference(str, enum.Enum):
    FIRST_VALID_FRAME = "FIRST_VALID_FRAME"
    PER_FRAME = "PER_FRAME"


@dataclass(frozen=True)
class NormalizationConfig:
    enabled: bool = True
    reference_torso_length: float = 1.0
    rotation_reference: RotationReference = RotationReference.FIRST_VALID_FRAME
    center_joint: str = "spine_base"
    left_shoulder: str = "left_shoulder"
    right_shoulder: str = "right_shoulder"
    torso_top: str = "neck"
    torso_bottom: str = "spine_base"

    def __post_init__(self):
        object.__setattr__(self, "rotation_reference", RotationReference(self.rotation_reference))
        if not self.reference_torso_length > 0:
            raise ConfigError("must be > 0", "normalization.reference_torso_length")

    def check_joints(self, joint_set):
        for name in ("center_joint", "left_shoulder", "right_shoulder", "torso_top", "torso_bottom"):
            joint = getattr(self, name)
            if joint not in joint_set.joint_names:
                raise ConfigError(f"joint {joint!r} not in {joint_set.name}", f"normalization.{name}")


def _fill(values, ok):
    """Forward-fill rows of ``values`` where ``ok`` is false; leading gaps take
    the first good row."""
    idx = np.where(ok, np.arange(len(ok)), -1)
    idx = np.maximum.accumulate(idx)
    first = np.argmax(ok)
    idx[idx < 0] = first
    return values[idx]


def _apply(seq, positions, **prov):
    positions = np.where(seq.valid[..., None], positions, 0.0)
    return seq.replace(positions=positions, provenance={**seq.provenance, **prov})


def center(seq: SkeletonSequence, cfg: NormalizationConfig = NormalizationConfig()) -> SkeletonSequence:
    """Translate each frame so the center joint sits at the origin.

    Frames where the center joint is invalid reuse the nearest earlier center.
    """
    c = seq.joint_set.index(cfg.center_joint)
    ok = seq.valid[:, c]
    if not ok.any():
        raise DegenerateSkeleton(f"center joint {cfg.center_joint!r} never valid")
    origin = _fill(seq.positions[:, c], ok)
    return _apply(seq, seq.positions - origin[:, None, :])


def torso_lengths(seq: SkeletonSequence, cfg: NormalizationConfig) -> np.ndarray:
    top, bottom = seq.joint_set.index(cfg.torso_top), seq.joint_set.index(cfg.torso_bottom)
    ok = seq.valid[:, top] & seq.valid[:, bottom]
    return np.linalg.norm(seq.positions[ok, top] - seq.positions[ok, bottom], axis=-1)


def scale(seq: SkeletonSequence, cfg: NormalizationConfig = NormalizationConfig()) -> SkeletonSequence:
    """Scale by ``reference_torso_length / mean torso length``; the factor is
    recorded as ``provenance['scale']``."""
    lengths = torso_lengths(seq, cfg)
    if len(lengths) == 0:
        raise DegenerateSkeleton("torso joints never valid together")
    mean = float(lengths.mean())
    if mean < MIN_TORSO:
        raise DegenerateSkeleton(f"mean torso length {mean:.3g} m is degenerate")
    s = cfg.reference_torso_length / mean
    return _apply(seq, seq.positions * s, scale=s)


def yaw_matrix(theta: float) -> np.ndarray:
    """Rotation in the x-z plane taking the x axis toward +z by ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def shoulder_yaw(seq: SkeletonSequence, cfg: NormalizationConfig) -> np.ndarray:
    """Per-frame angle ``-atan2(v_z, v_x)`` of the left-to-right shoulder
    vector, NaN where either shoulder is invalid."""
    ls, rs = seq.joint_set.index(cfg.left_shoulder), seq.joint_set.index(cfg.right_shoulder)
    v = seq.positions[:, rs] - seq.positions[:, ls]
    ok = seq.valid[:, ls] & seq.valid[:, rs]
    theta = np.full(len(seq), np.nan)
    if ok.any():
        horiz = np.hypot(v[ok, 0], v[ok, 2])
        if np.any(horiz < MIN_SHOULDER):
            bad = int(np.flatnonzero(ok)[np.argmax(horiz < MIN_SHOULDER)])
            raise DegenerateSkeleton(f"shoulders vertically stacked in frame {bad}; cannot align")
        theta[ok] = -np.arctan2(v[ok, 2], v[ok, 0])
    return theta


def align_shoulders(seq: SkeletonSequence,
                    cfg: NormalizationConfig = NormalizationConfig()) -> SkeletonSequence:
    """Rotate about the vertical axis so the shoulder line points along +x."""
    ls, rs = seq.joint_set.index(cfg.left_shoulder), seq.joint_set.index(cfg.right_shoulder)
    ok = seq.valid[:, ls] & seq.valid[:, rs]
    if not ok.any():
        raise DegenerateSkeleton("shoulders never valid together")
    if cfg.rotation_reference is RotationReference.FIRST_VALID_FRAME:
        ref = int(np.argmax(ok))
        single = seq.replace(positions=seq.positions[ref:ref + 1], valid=seq.valid[ref:ref + 1],
                             t=seq.t[ref:ref + 1])
        theta = float(shoulder_yaw(single, cfg)[0])
        rotated = seq.positions @ yaw_matrix(theta).T
        return _apply(seq, rotated, yaw=theta)
    theta = _fill(shoulder_yaw(seq, cfg), ok)
    mats = np.stack([yaw_matrix(a) for a in theta])
    rotated = np.einsum("nij,nkj->nki", mats, seq.positions)
    return _apply(seq, rotated, yaw=float(theta[0]))


def normalize(seq: SkeletonSequence, cfg: NormalizationConfig = NormalizationConfig()) -> SkeletonSequence:
    """center, then scale, then align_shoulders; identity when disabled."""
    if not cfg.enabled:
        return seq
    cfg.check_joints(seq.joint_set)
    return align_shoulders(scale(center(seq, cfg), cfg), cfg)


def rigid_transform(seq: SkeletonSequence, yaw: float = 0.0, scale_factor: float = 1.0,
                    translation=(0.0, 0.0, 0.0)) -> SkeletonSequence:
    """Apply ``p -> scale * R_yaw p + translation`` to every valid joint."""
    p = scale_factor * (seq.positions @ yaw_matrix(yaw).T) + np.asarray(translation, float)
    return _apply(seq, p)
