"""Skeleton data model: joint sets, frames, sequences, joint maps and class tables.

Sequences store their frames column-wise as numpy arrays (``positions`` of
shape ``(N, J, 3)``, ``valid`` of shape ``(N, J)``, ``t`` of shape ``(N,)``).
All arrays are made read-only on construction so values can be shared
freely between threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, JointSetMismatch

MISSING = None


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _data_path(name):
    return resources.files("skelact") / "data" / name


@dataclass(frozen=True)
class JointSet:
    name: str
    joint_names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.joint_names)) != len(self.joint_names):
            raise DataError(f"duplicate joint names in joint set {self.name}")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def index(self, joint: str) -> int:
        try:
            return self.joint_names.index(joint)
        except ValueError:
            raise DataError(f"joint {joint!r} not in joint set {self.name}") from None


@lru_cache(maxsize=None)
def _builtin_joint_sets() -> dict[str, JointSet]:
    raw = json.loads(_data_path("joint_sets.json").read_text())
    return {name: JointSet(name, tuple(names)) for name, names in raw.items()}


def joint_set(name: str | JointSet) -> JointSet:
    """Look up a built-in joint set (``NTU25``, ``TRACKER19``, ``COMMON``)."""
    if isinstance(name, JointSet):
        return name
    try:
        return _builtin_joint_sets()[name]
    except KeyError:
        raise DataError(f"unknown joint set {name!r}") from None


NTU25 = joint_set("NTU25")
TRACKER19 = joint_set("TRACKER19")
COMMON = joint_set("COMMON")


@dataclass(frozen=True, eq=False)
class SkeletonFrame:
    t: float
    joints: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joints", _frozen(self.joints, np.float64).reshape(-1, 3))
        object.__setattr__(self, "valid", _frozen(self.valid, bool).reshape(-1))
        if len(self.joints) != len(self.valid):
            raise DataError("joints and valid flags differ in length")
        if self.t < 0 or not np.isfinite(self.t):
            raise DataError(f"invalid timestamp {self.t}")
        if not np.all(np.isfinite(self.joints)):
            raise DataError("non-finite joint coordinate")

    def __eq__(self, other):
        if not isinstance(other, SkeletonFrame):
            return NotImplemented
        return (self.t == other.t and np.array_equal(self.joints, other.joints)
                and np.array_equal(self.valid, other.valid))


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """An ordered run of frames for one tracked body.

    ``provenance`` carries derived per-sequence facts such as the scale
    factor applied by normalization.
    """

    joint_set: JointSet
    positions: np.ndarray
    valid: np.ndarray
    t: np.ndarray
    fps: float
    label: int | None = None
    subject: int | str | None = None
    source: str = ""
    provenance: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        js = joint_set(self.joint_set)
        object.__setattr__(self, "joint_set", js)
        pos = _frozen(self.positions, np.float64)
        if pos.size == 0:
            pos = _frozen(np.zeros((0, js.joint_count, 3)), np.float64)
        valid = _frozen(self.valid, bool)
        if valid.size == 0:
            valid = _frozen(np.zeros((0, js.joint_count)), bool)
        t = _frozen(self.t, np.float64).reshape(-1)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "provenance", dict(self.provenance))
        n = len(t)
        if pos.shape != (n, js.joint_count, 3) or valid.shape != (n, js.joint_count):
            raise DataError(
                f"sequence arrays inconsistent with {js.name}: positions {pos.shape}, "
                f"valid {valid.shape}, {n} timestamps")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(t)):
            raise DataError("non-finite coordinate or timestamp")
        if n and (t[0] < 0 or np.any(np.diff(t) < 0)):
            raise DataError("timestamps must be non-negative and non-decreasing")

    @classmethod
    def from_frames(cls, joint_set_, frames: Iterable[SkeletonFrame], fps, **kw):
        js = joint_set(joint_set_)
        frames = list(frames)
        pos = np.array([f.joints for f in frames]).reshape(-1, js.joint_count, 3)
        valid = np.array([f.valid for f in frames]).reshape(-1, js.joint_count)
        t = np.array([f.t for f in frames], dtype=float)
        return cls(js, pos, valid, t, fps, **kw)

    def __len__(self):
        return len(self.t)

    def frame(self, i: int) -> SkeletonFrame:
        return SkeletonFrame(float(self.t[i]), self.positions[i], self.valid[i])

    @property
    def frames(self) -> list[SkeletonFrame]:
        return [self.frame(i) for i in range(len(self))]

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    def replace(self, **changes) -> "SkeletonSequence":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (self.joint_set == other.joint_set and self.fps == other.fps
                and self.label == other.label and self.subject == other.subject
                and self.source == other.source
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.valid, other.valid))

    def __repr__(self):
        return (f"SkeletonSequence({self.joint_set.name}, frames={len(self)}, fps={self.fps}, "
                f"label={self.label}, subject={self.subject!r})")


@dataclass(frozen=True)
class JointMap:
    """Per-target-joint index into the source joint set, ``None`` for missing."""

    source: JointSet
    target: JointSet
    mapping: tuple[int | None, ...]

    def __post_init__(self):
        object.__setattr__(self, "source", joint_set(self.source))
        object.__setattr__(self, "target", joint_set(self.target))
        object.__setattr__(self, "mapping", tuple(self.mapping))
        if len(self.mapping) != self.target.joint_count:
            raise DataError(f"mapping has {len(self.mapping)} entries, target "
                            f"{self.target.name} has {self.target.joint_count} joints")
        for m in self.mapping:
            if m is not None and not 0 <= m < self.source.joint_count:
                raise DataError(f"mapping index {m} out of range for {self.source.name}")

    @classmethod
    def identity(cls, js) -> "JointMap":
        js = joint_set(js)
        return cls(js, js, tuple(range(js.joint_count)))

    @classmethod
    def from_dict(cls, d: Mapping) -> "JointMap":
        return cls(joint_set(d["source"]), joint_set(d["target"]), tuple(d["mapping"]))

    def to_dict(self) -> dict:
        return {"source": self.source.name, "target": self.target.name,
                "mapping": list(self.mapping)}

    def then(self, other: "JointMap") -> "JointMap":
        """Composition: apply ``self`` first, then ``other``."""
        if other.source != self.target:
            raise JointSetMismatch(self.target.name, other.source.name)
        mapping = tuple(None if m is None else self.mapping[m] for m in other.mapping)
        return JointMap(self.source, other.target, mapping)


def load_joint_map(name_or_path: str | Path) -> JointMap:
    """Load a joint map from a JSON file, or a built-in one by stem
    (``ntu25_to_common``, ``tracker19_to_common``)."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        text = _data_path(f"{name_or_path}.json").read_text()
    return JointMap.from_dict(json.loads(text))


def default_joint_map(source) -> JointMap:
    source = joint_set(source)
    if source == COMMON:
        return JointMap.identity(COMMON)
    return load_joint_map(f"{source.name.lower()}_to_common")


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    source_dataset_id: int | None = None


def _canon(name: str) -> str:
    return "_".join(name.strip().lower().replace("-", " ").split())


@dataclass(frozen=True)
class ClassTable:
    entries: tuple[ClassEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.class_id for e in self.entries]
        if ids != list(range(len(ids))):
            raise DataError("class ids must be contiguous from 0")
        names = [_canon(e.name) for e in self.entries]
        if len(set(names)) != len(names):
            raise DataError("class names must be unique")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def id_of(self, name: str) -> int:
        key = _canon(name)
        for e in self.entries:
            if _canon(e.name) == key:
                return e.class_id
        raise DataError(f"class {name!r} not in class table")

    def name_of(self, class_id: int) -> str:
        return self.entries[class_id].name

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassTable":
        return cls(tuple(ClassEntry(int(e["class_id"]), e["name"], e.get("source_dataset_id"))
                         for e in d["entries"]))

    def to_dict(self) -> dict:
        return {"entries": [{"class_id": e.class_id, "name": e.name,
                             "source_dataset_id": e.source_dataset_id} for e in self.entries]}

    def translate(self, other: "ClassTable") -> dict[int, int]:
        """Map this table's ids into ``other`` through the shared dataset ids.

        Raises listing every class of ``self`` that has no counterpart.
        """
        by_src = {e.source_dataset_id: e.class_id for e in other.entries
                  if e.source_dataset_id is not None}
        out, unmapped = {}, []
        for e in self.entries:
            if e.source_dataset_id in by_src:
                out[e.class_id] = by_src[e.source_dataset_id]
            else:
                unmapped.append(e.name)
        if unmapped:
            raise DataError(f"classes without a mapping: {', '.join(unmapped)}")
        return out


def load_class_table(name_or_path: str | Path) -> ClassTable:
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        text = _data_path(f"{name_or_path}.json").read_text()
    return ClassTable.from_dict(json.loads(text))


def remap(seq: SkeletonSequence, jmap: JointMap) -> SkeletonSequence:
    """Re-express ``seq`` in ``jmap.target``; missing targets become invalid zeros."""
    if seq.joint_set != jmap.source:
        raise JointSetMismatch(jmap.source.name, seq.joint_set.name)
    n, jt = len(seq), jmap.target.joint_count
    pos = np.zeros((n, jt, 3))
    valid = np.zeros((n, jt), dtype=bool)
    src = [m for m in jmap.mapping if m is not None]
    dst = [j for j, m in enumerate(jmap.mapping) if m is not None]
    pos[:, dst] = seq.positions[:, src]
    valid[:, dst] = seq.valid[:, src]
    return seq.replace(joint_set=jmap.target, positions=pos, valid=valid)


def flatten(frame: SkeletonFrame) -> np.ndarray:
    """``[x0, y0, z0, x1, ...]`` in joint order."""
    return frame.joints.reshape(-1).copy()


def unflatten(vec: Sequence[float], t: float = 0.0, valid=None) -> SkeletonFrame:
    joints = np.asarray(vec, dtype=float).reshape(-1, 3)
    if valid is None:
        valid = np.ones(len(joints), dtype=bool)
    return SkeletonFrame(t, joints, valid)
