"""Procedural generator of labelled COMMON-joint skeleton sequences.

Each archetype drives a small forward-kinematics rig (arms and legs as
two-segment chains hanging off a rest pose) with a parametric trajectory
over the clip. Per-sample actors vary in size, heading, position, timing and
amplitude; per-frame jitter is added last.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .ingest import write_recording
from .preprocess import rigid_transform, yaw_matrix
from .skeleton import COMMON, ClassTable, SkeletonSequence, load_class_table

ARCHETYPES = ("wave_hand", "cheer_up", "sitting_down", "standing_up", "kick",
              "point_to_something", "throw", "drink")

J = {name: i for i, name in enumerate(COMMON.joint_names)}

UPPER_ARM, FOREARM = 0.28, 0.25
THIGH, SHIN = 0.43, 0.43
TORSO, NECK_TO_HEAD = 0.5, 0.2
SHOULDER_HALF, HIP_HALF = 0.18, 0.1
PELVIS_HEIGHT = THIGH + SHIN + 0.04
CAMERA_HEIGHT = 1.0


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3 - 2 * u)


def bump(u, start, end):
    """0 -> 1 -> 0 over [start, end], smooth at both ends."""
    v = np.clip((u - start) / (end - start), 0.0, 1.0)
    return np.sin(np.pi * v) ** 2


def _direction(elevation, azimuth, side):
    """Unit vector for a limb segment. ``elevation`` 0 points down, pi/2
    horizontal, pi up; ``azimuth`` 0 points sideways outward, +pi/2 forward
    (toward the camera, -z)."""
    s = np.sin(elevation)
    return np.stack([side * s * np.cos(azimuth), -np.cos(elevation),
                     -s * np.sin(azimuth)], axis=-1)


@dataclass
class Pose:
    """Per-frame joint angles in radians (arrays of length N) plus root motion."""

    n: int

    def __post_init__(self):
        z = np.zeros(self.n)
        self.arm = {side: {"up_el": z + 0.15, "up_az": z + 0.3, "fo_el": z + 0.2, "fo_az": z + 0.6}
                    for side in ("left", "right")}
        self.leg = {side: {"thigh": z.copy(), "shin": z.copy()} for side in ("left", "right")}
        self.pelvis_drop = z.copy()
        self.lean = z.copy()
        self.twist = z.copy()

    def positions(self) -> np.ndarray:
        n = self.n
        pos = np.zeros((n, COMMON.joint_count, 3))
        pelvis = np.zeros((n, 3))
        pelvis[:, 1] = -self.pelvis_drop
        pos[:, J["spine_base"]] = pelvis

        # torso: forward lean rotates about x, twist about y
        up = np.stack([np.zeros(n), np.cos(self.lean), -np.sin(self.lean)], axis=-1)
        pos[:, J["neck"]] = pelvis + TORSO * up
        pos[:, J["head"]] = pos[:, J["neck"]] + NECK_TO_HEAD * up
        shoulder_axis = np.stack([np.cos(self.twist), np.zeros(n), np.sin(self.twist)], axis=-1)
        hip_axis = np.array([1.0, 0.0, 0.0])
        for side, sign in (("left", -1.0), ("right", 1.0)):
            sh = pos[:, J["neck"]] - 0.03 * up + sign * SHOULDER_HALF * shoulder_axis
            a = self.arm[side]
            elbow = sh + UPPER_ARM * _direction(a["up_el"], a["up_az"], sign)
            wrist = elbow + FOREARM * _direction(a["fo_el"], a["fo_az"], sign)
            pos[:, J[f"{side}_shoulder"]] = sh
            pos[:, J[f"{side}_elbow"]] = elbow
            pos[:, J[f"{side}_wrist"]] = wrist

            hip = pelvis - [0, 0.02, 0] + sign * HIP_HALF * hip_axis
            lg = self.leg[side]
            knee = hip + THIGH * _direction(lg["thigh"], np.full(n, np.pi / 2), sign)
            ankle = knee + SHIN * _direction(lg["shin"], np.full(n, np.pi / 2), sign)
            pos[:, J[f"{side}_hip"]] = hip
            pos[:, J[f"{side}_knee"]] = knee
            pos[:, J[f"{side}_ankle"]] = ankle
        return pos


def _sit_curve(u, amp):
    return amp * smoothstep((u - 0.15) / 0.6)


def _animate(name: str, u: np.ndarray, amp: float, rate: float) -> Pose:
    """Build the pose trajectory of one archetype over clip phase ``u``."""
    p = Pose(len(u))
    right, left = p.arm["right"], p.arm["left"]
    if name == "wave_hand":
        raise_ = smoothstep(u / 0.2)
        right["up_el"] = 0.15 + raise_ * 1.45
        right["up_az"] = 0.3 * (1 - raise_)
        right["fo_el"] = 0.2 + raise_ * 2.4 + raise_ * amp * 0.5 * np.sin(2 * np.pi * 2.0 * rate * u * 3)
        right["fo_az"] = 0.6 * (1 - raise_)
    elif name == "cheer_up":
        raise_ = smoothstep(u / 0.3)
        pump = 0.15 * amp * np.sin(2 * np.pi * 1.5 * rate * u * 3) * raise_
        for arm in (right, left):
            arm["up_el"] = 0.15 + raise_ * 2.6 + pump
            arm["fo_el"] = 0.2 + raise_ * 2.7 + pump
            arm["up_az"] = 0.3 * (1 - raise_) + 0.2 * raise_
            arm["fo_az"] = 0.6 * (1 - raise_) + 0.2 * raise_
    elif name in ("sitting_down", "standing_up"):
        s = _sit_curve(u, 1.0)
        if name == "standing_up":
            s = 1.0 - s
        depth = 0.42 * amp
        p.pelvis_drop = depth * s
        thigh = np.arccos(np.clip(1 - depth * s / THIGH, -1, 1))
        for lg in p.leg.values():
            lg["thigh"] = thigh
            lg["shin"] = 0.05 * s
        p.lean = 0.35 * np.sin(np.pi * s)
        for arm in (right, left):
            arm["up_el"] = 0.15 + 0.5 * s
            arm["up_az"] = 0.3 + 1.0 * s
    elif name == "kick":
        k = bump(u, 0.3, 0.65)
        p.leg["right"]["thigh"] = 1.2 * amp * k
        p.leg["right"]["shin"] = 1.2 * amp * k * (0.4 + 0.6 * k)
        p.lean = -0.15 * k
        for arm in (right, left):
            arm["up_el"] = 0.15 + 0.5 * k
    elif name == "point_to_something":
        r = smoothstep((u - 0.1) / 0.25) - smoothstep((u - 0.8) / 0.15)
        right["up_el"] = 0.15 + r * 1.45 * amp
        right["up_az"] = 0.3 + r * 1.0
        right["fo_el"] = 0.2 + r * 1.45 * amp
        right["fo_az"] = 0.6 + r * 0.9
    elif name == "throw":
        wind = bump(u, 0.1, 0.5)
        swing = bump(u, 0.45, 0.7)
        right["up_el"] = 0.15 + 2.2 * wind + 1.2 * swing
        right["up_az"] = 0.3 - 1.6 * wind + 1.6 * swing
        right["fo_el"] = 0.2 + 2.8 * wind + 1.4 * swing
        right["fo_az"] = 0.6 - 1.8 * wind + 1.4 * swing
        p.twist = (-0.4 * wind + 0.4 * swing) * amp
        p.lean = 0.2 * swing
    elif name == "drink":
        d = smoothstep((u - 0.15) / 0.25) - smoothstep((u - 0.7) / 0.2)
        sip = 0.08 * np.sin(2 * np.pi * rate * u * 3) * d
        right["up_el"] = 0.15 + d * 0.9 * amp
        right["up_az"] = 0.3 + d * 1.1
        right["fo_el"] = 0.2 + d * (2.75 + sip)
        right["fo_az"] = 0.6 + d * 0.8
    else:
        raise ValueError(f"unknown archetype {name!r}")
    return p


def rest_pose() -> np.ndarray:
    """Canonical rest pose (15 x 3), spine base at the origin, unit scale."""
    return _animate("kick", np.zeros(1), 1.0, 1.0).positions()[0]


@dataclass(frozen=True)
class SynthConfig:
    classes: tuple[str, ...] = ARCHETYPES
    samples_per_class: int = 50
    fps: float = 30.0
    duration_seconds: float = 3.0
    actor_scale_range: tuple[float, float] = (0.8, 1.2)
    actor_yaw_range: tuple[float, float] = (-math.pi / 12, math.pi / 12)
    jitter_sigma: float = 0.005
    n_subjects: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "actor_scale_range", tuple(self.actor_scale_range))
        object.__setattr__(self, "actor_yaw_range", tuple(self.actor_yaw_range))
        for c in self.classes:
            if c not in ARCHETYPES:
                raise ConfigError(f"unknown archetype {c!r}", "synth.classes")
        if not self.classes or self.samples_per_class < 1:
            raise ConfigError("need at least one class and one sample per class", "synth")
        lo, hi = self.actor_scale_range
        if not 0 < lo <= hi:
            raise ConfigError("must satisfy 0 < min <= max", "synth.actor_scale_range")
        if self.actor_yaw_range[0] > self.actor_yaw_range[1]:
            raise ConfigError("must satisfy min <= max", "synth.actor_yaw_range")
        if not self.duration_seconds > 0 or not self.fps > 0:
            raise ConfigError("duration and fps must be positive", "synth")
        if self.jitter_sigma < 0:
            raise ConfigError("must be >= 0", "synth.jitter_sigma")


def synth_class_table() -> ClassTable:
    return load_class_table("synth_classes")


def generate_one(name: str, cfg: SynthConfig, rng: np.random.Generator,
                 label: int | None = None, subject=None, source: str = "") -> SkeletonSequence:
    n = int(round(cfg.duration_seconds * cfg.fps))
    t = np.arange(n) / cfg.fps
    speed = rng.uniform(0.85, 1.15)
    onset = rng.uniform(-0.08, 0.08)
    amp = rng.uniform(0.9, 1.1)
    rate = rng.uniform(0.85, 1.15)
    u = (t / cfg.duration_seconds - onset) * speed
    body = _animate(name, u, amp, rate).positions()
    scale = rng.uniform(*cfg.actor_scale_range)
    yaw = rng.uniform(*cfg.actor_yaw_range)
    offset = np.array([rng.uniform(-0.3, 0.3), PELVIS_HEIGHT * scale - CAMERA_HEIGHT,
                       rng.uniform(2.5, 3.5)])
    pos = scale * body @ yaw_matrix(yaw).T + offset
    if cfg.jitter_sigma > 0:
        pos = pos + rng.normal(0.0, cfg.jitter_sigma, pos.shape)
    valid = np.ones(pos.shape[:2], dtype=bool)
    return SkeletonSequence(COMMON, pos, valid, t, cfg.fps, label=label, subject=subject,
                            source=source, provenance={"actor_scale": scale, "actor_yaw": yaw})


def generate(cfg: SynthConfig = SynthConfig(), class_table: ClassTable | None = None
             ) -> list[SkeletonSequence]:
    """Class-major list of sequences; each sample has its own generator seeded
    by ``(seed, class index, sample index)``."""
    table = class_table or synth_class_table()
    out = []
    for ci, name in enumerate(cfg.classes):
        label = table.id_of(name)
        for i in range(cfg.samples_per_class):
            rng = np.random.default_rng([cfg.seed, ci, i])
            out.append(generate_one(name, cfg, rng, label=label,
                                    subject=1 + i % cfg.n_subjects, source=f"{name}/{i:04d}"))
    return out


def domain_shift(datasets: Sequence[SkeletonSequence], shift: tuple[float, float]
                 ) -> list[SkeletonSequence]:
    """Scale by ``shift[0]`` and rotate by ``shift[1]`` radians about the
    camera's vertical axis, identically for every sequence."""
    k, yaw = shift
    if k == 1.0 and yaw == 0.0:
        return list(datasets)
    return [rigid_transform(s, yaw=yaw, scale_factor=k) for s in datasets]


def write_dataset(sequences: Iterable[SkeletonSequence], root: str | Path,
                  class_table: ClassTable | None = None) -> list[Path]:
    """Write ``<root>/<class>/<index>.jsonl`` SKELREC-JSONL files."""
    table = class_table or synth_class_table()
    root = Path(root)
    counters: dict[str, int] = {}
    paths = []
    for seq in sequences:
        name = table.name_of(seq.label)
        i = counters.get(name, 0)
        counters[name] = i + 1
        path = root / name / f"{i:04d}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_recording(seq, fh, table)
        paths.append(path)
    return paths
