"""Readers and writers for NTU ``.skeleton`` files and SKELREC-JSONL recordings,
plus train/test split construction."""
from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DataError, ParseError
from .skeleton import NTU25, ClassTable, SkeletonSequence, _data_path, joint_set

NTU_FPS = 30.0
RECORDING_VERSION = 1

_NTU_NAME = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


@dataclass(frozen=True)
class NtuFileMeta:
    setup: int
    camera: int
    performer: int
    replication: int
    action: int

    def __post_init__(self):
        for name in ("setup", "camera", "performer", "replication", "action"):
            if getattr(self, name) < 1:
                raise DataError(f"NTU {name} must be positive")
        if not 1 <= self.action <= 60:
            raise DataError(f"NTU action {self.action} outside [1, 60]")

    @classmethod
    def from_filename(cls, name: str | Path) -> "NtuFileMeta":
        m = _NTU_NAME.search(Path(name).name)
        if m is None:
            raise DataError(f"not an NTU skeleton file name: {name}")
        return cls(*(int(g) for g in m.groups()))

    @property
    def stem(self) -> str:
        return (f"S{self.setup:03d}C{self.camera:03d}P{self.performer:03d}"
                f"R{self.replication:03d}A{self.action:03d}")


class _Lines:
    def __init__(self, text: str):
        self._lines = text.splitlines()
        self.lineno = 0

    def next_tokens(self) -> list[str]:
        while self.lineno < len(self._lines):
            line = self._lines[self.lineno]
            self.lineno += 1
            if line.strip():
                return line.split()
        raise ParseError("unexpected end of file (truncated)", self.lineno + 1)

    def next_int(self) -> int:
        toks = self.next_tokens()
        try:
            return int(toks[0])
        except ValueError:
            raise ParseError(f"expected integer, got {toks[0]!r}", self.lineno) from None


def _finite_floats(tokens, lineno):
    try:
        vals = [float(x) for x in tokens]
    except ValueError as e:
        raise ParseError(f"non-numeric token ({e})", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite coordinate", lineno)
    return vals


def motion_energy(positions: np.ndarray) -> float:
    """Sum of squared frame-to-frame joint displacements."""
    if len(positions) < 2:
        return 0.0
    return float(np.sum(np.diff(positions, axis=0) ** 2))


def parse_ntu_skeleton(data: str | bytes | IO, meta: NtuFileMeta) -> SkeletonSequence:
    """Parse one NTU ``.skeleton`` file into an NTU25 sequence at 30 fps.

    Only the first three reals of each joint line (camera-space x, y, z) are
    read. When several bodies appear, the one with the largest motion energy
    over the file is kept; ties go to the lower body id. Frames in which that
    body is absent are kept as all-invalid zero frames.
    """
    if hasattr(data, "read"):
        data = data.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = _Lines(data)
    n_frames = lines.next_int()
    bodies: dict[str, dict[int, np.ndarray]] = {}
    for f in range(n_frames):
        n_bodies = lines.next_int()
        for _ in range(n_bodies):
            head = lines.next_tokens()
            body_id = head[0]
            n_joints = lines.next_int()
            if n_joints != NTU25.joint_count:
                raise ParseError(f"joint count {n_joints} != 25", lines.lineno)
            joints = np.empty((n_joints, 3))
            for j in range(n_joints):
                toks = lines.next_tokens()
                if len(toks) < 3:
                    raise ParseError("joint line needs at least 3 values", lines.lineno)
                joints[j] = _finite_floats(toks[:3], lines.lineno)
            bodies.setdefault(body_id, {})[f] = joints

    pos = np.zeros((n_frames, NTU25.joint_count, 3))
    valid = np.zeros((n_frames, NTU25.joint_count), dtype=bool)
    if bodies:
        def rank(item):
            body_id, frames = item
            energy = motion_energy(np.array([frames[k] for k in sorted(frames)]))
            try:
                key = int(body_id)
            except ValueError:
                key = body_id
            return (-energy, key)

        _, kept = min(bodies.items(), key=rank)
        for f, joints in kept.items():
            pos[f] = joints
            valid[f] = True
    return SkeletonSequence(NTU25, pos, valid, np.arange(n_frames) / NTU_FPS, NTU_FPS,
                            label=meta.action - 1, subject=meta.performer, source=meta.stem)


def load_ntu_file(path: str | Path) -> SkeletonSequence:
    path = Path(path)
    return parse_ntu_skeleton(path.read_bytes(), NtuFileMeta.from_filename(path))


def read_recording(stream: str | bytes | IO, class_table: ClassTable | None = None,
                   source: str = "") -> SkeletonSequence:
    """Read a SKELREC-JSONL v1 recording.

    A non-null header label needs ``class_table`` to resolve it to a class id.
    Joints with confidence 0 are marked invalid and zeroed.
    """
    if hasattr(stream, "read"):
        stream = stream.read()
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    lines = stream.split("\n")
    if not lines or not lines[0].strip():
        raise DataError("recording has no header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"bad header: {e}", 1) from None
    if not isinstance(header, dict) or "joint_set" not in header or "fps" not in header:
        raise ParseError("header must be an object with joint_set and fps", 1)
    if header.get("version", RECORDING_VERSION) != RECORDING_VERSION:
        raise ParseError(f"unsupported version {header.get('version')}", 1)
    js = joint_set(header["joint_set"])
    label = header.get("label")
    if label is not None:
        if class_table is None:
            raise DataError(f"class table required to resolve label {label!r}")
        label = class_table.id_of(label)

    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"bad frame: {e}", i) from None
        arr = np.asarray(frame, dtype=float)
        if arr.shape != (js.joint_count, 4):
            raise ParseError(f"frame arity {arr.shape} does not match {js.name} "
                             f"({js.joint_count} joints x 4)", i)
        if not np.all(np.isfinite(arr)):
            raise ParseError("non-finite coordinate", i)
        rows.append(arr)
    arr = np.array(rows).reshape(-1, js.joint_count, 4)
    valid = arr[..., 3] != 0
    pos = np.where(valid[..., None], arr[..., :3], 0.0)
    fps = float(header["fps"])
    return SkeletonSequence(js, pos, valid, np.arange(len(arr)) / fps, fps, label=label,
                            subject=header.get("subject"), source=source)


def _num(x: float):
    return int(x) if float(x).is_integer() and abs(x) < 2**53 else float(x)


def write_recording(seq: SkeletonSequence, stream: IO[str] | None = None,
                    class_table: ClassTable | None = None) -> str:
    """Serialize ``seq`` as canonical SKELREC-JSONL; returns the text and
    writes it to ``stream`` if given."""
    label = None
    if seq.label is not None:
        if class_table is None:
            raise DataError("class table required to write a labelled recording")
        label = class_table.name_of(seq.label)
    header = {"version": RECORDING_VERSION, "joint_set": seq.joint_set.name,
              "fps": _num(seq.fps), "label": label,
              "subject": None if seq.subject is None else str(seq.subject)}
    out = [json.dumps(header, separators=(",", ":"))]
    for pos, valid in zip(seq.positions, seq.valid):
        out.append(json.dumps([[float(x), float(y), float(z), int(v)]
                               for (x, y, z), v in zip(pos, valid)], separators=(",", ":")))
    text = "\n".join(out) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def ntu_to_recording(path: str | Path, out: str | Path, class_table: ClassTable | None = None):
    """Transcode an NTU ``.skeleton`` file to SKELREC-JSONL.

    Without a class table the NTU action label is dropped from the header.
    """
    seq = load_ntu_file(path)
    if class_table is None:
        seq = seq.replace(label=None)
    else:
        by_src = {e.source_dataset_id: e.class_id for e in class_table.entries}
        if seq.label + 1 not in by_src:
            raise DataError(f"NTU action {seq.label + 1} not in class table")
        seq = seq.replace(label=by_src[seq.label + 1])
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        write_recording(seq, fh, class_table)
    return seq


class SplitProtocol(enum.Enum):
    CROSS_SUBJECT = "CROSS_SUBJECT"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True)
class DatasetSplit:
    """Train and test sequence ids (positions in the split's input list)."""

    train: tuple[int, ...]
    test: tuple[int, ...]
    protocol: SplitProtocol

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise DataError("train and test splits overlap")

    def select(self, sequences: Sequence):
        return [sequences[i] for i in self.train], [sequences[i] for i in self.test]


def cross_subject_split(sequences: Sequence[SkeletonSequence],
                        train_subject_ids: Iterable[int]) -> DatasetSplit:
    train_subject_ids = set(train_subject_ids)
    missing = [i for i, s in enumerate(sequences) if s.subject is None]
    if missing:
        raise DataError(f"sequences without subject id: {missing}")
    train = tuple(i for i, s in enumerate(sequences) if s.subject in train_subject_ids)
    test = tuple(i for i, s in enumerate(sequences) if s.subject not in train_subject_ids)
    return DatasetSplit(train, test, SplitProtocol.CROSS_SUBJECT)


def custom_split(n_sequences: int, train_ids: Iterable[int]) -> DatasetSplit:
    train = tuple(sorted(set(train_ids)))
    if any(not 0 <= i < n_sequences for i in train):
        raise DataError("train id out of range")
    chosen = set(train)
    test = tuple(i for i in range(n_sequences) if i not in chosen)
    return DatasetSplit(train, test, SplitProtocol.CUSTOM)


@lru_cache(maxsize=None)
def ntu_cross_subject_train_ids() -> frozenset[int]:
    """The 20 NTU RGB+D training performers of the cross-subject protocol."""
    raw = json.loads(_data_path("ntu_cross_subject.json").read_text())
    return frozenset(raw["train_subject_ids"])


def load_recordings(root: str | Path, class_table: ClassTable | None = None) -> list[SkeletonSequence]:
    """Read every ``*.jsonl`` under ``root`` in sorted path order."""
    root = Path(root)
    return [read_recording(p.read_bytes(), class_table, source=str(p.relative_to(root)))
            for p in sorted(root.rglob("*.jsonl"))]
