"""Resampling to the model frame rate and packing fixed-length windows."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import ConfigError, DataError
from .skeleton import JointSet, SkeletonFrame, SkeletonSequence, joint_set

_EPS = 1e-9


class PadPolicy(str, enum.Enum):
    REPEAT = "REPEAT"
    ZERO = "ZERO"


@dataclass(frozen=True)
class WindowConfig:
    window_seconds: float = 3.0
    model_fps: float = 30.0
    hop_seconds: float = 1.0
    pad_policy: PadPolicy = PadPolicy.REPEAT

    def __post_init__(self):
        object.__setattr__(self, "pad_policy", PadPolicy(self.pad_policy))
        if not self.window_seconds > 0:
            raise ConfigError("must be > 0", "window.window_seconds")
        if not self.model_fps > 0:
            raise ConfigError("must be > 0", "window.model_fps")
        if not 0 < self.hop_seconds <= self.window_seconds:
            raise ConfigError("must satisfy 0 < hop_seconds <= window_seconds", "window.hop_seconds")

    @property
    def frames(self) -> int:
        return int(round(self.window_seconds * self.model_fps))

    @property
    def hop_frames(self) -> int:
        return max(1, int(round(self.hop_seconds * self.model_fps)))


@dataclass(frozen=True, eq=False)
class WindowTensor:
    """``data`` is ``T x 3J`` with masked joints zeroed; ``mask`` is ``T x J``."""

    data: np.ndarray
    mask: np.ndarray
    label: int | None = None
    t_end: float | None = None

    def __post_init__(self):
        t, d = self.data.shape
        if self.mask.shape != (t, d // 3) or d % 3:
            raise DataError(f"window data {self.data.shape} inconsistent with mask {self.mask.shape}")

    @property
    def frame_mask(self) -> np.ndarray:
        """True for time steps with at least one valid joint."""
        return self.mask.any(axis=1)


def _nearest(t: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Index of the nearest timestamp per grid point; ties go to the earlier frame."""
    hi = np.clip(np.searchsorted(t, grid, side="left"), 0, len(t) - 1)
    lo = np.clip(hi - 1, 0, len(t) - 1)
    take_lo = (grid - t[lo]) <= (t[hi] - grid)
    return np.where(take_lo, lo, hi)


def resample(seq: SkeletonSequence, model_fps: float) -> SkeletonSequence:
    """Nearest-timestamp selection onto a uniform ``model_fps`` grid.

    The grid starts at the first timestamp and has
    ``round(len(seq) * model_fps / seq.fps)`` points.
    """
    if len(seq) == 0:
        raise DataError("cannot resample an empty sequence")
    n_out = max(1, int(round(len(seq) * model_fps / seq.fps)))
    grid = seq.t[0] + np.arange(n_out) / model_fps
    idx = _nearest(seq.t, grid)
    return seq.replace(positions=seq.positions[idx], valid=seq.valid[idx], t=grid, fps=float(model_fps))


def pack_indices(n: int, frames: int, pad_policy: PadPolicy) -> np.ndarray:
    """Source frame index per window row, ``-1`` for zero padding."""
    if n >= frames:
        start = (n - frames) // 2
        return np.arange(start, start + frames)
    if pad_policy is PadPolicy.REPEAT:
        return np.arange(frames) % n
    return np.concatenate([np.arange(n), np.full(frames - n, -1)])


def pack(seq: SkeletonSequence, cfg: WindowConfig = WindowConfig()) -> WindowTensor:
    """Pack a sequence already at ``cfg.model_fps`` into one window.

    Long sequences contribute their center window; short ones are padded.
    """
    if len(seq) == 0:
        raise DataError("cannot pack a zero-frame sequence")
    idx = pack_indices(len(seq), cfg.frames, PadPolicy(cfg.pad_policy))
    pad = idx < 0
    safe = np.where(pad, 0, idx)
    mask = seq.valid[safe] & ~pad[:, None]
    pos = np.where(mask[..., None], seq.positions[safe], 0.0)
    t_end = float(seq.t[safe[~pad][-1]])
    return WindowTensor(pos.reshape(cfg.frames, -1), mask, seq.label, t_end)


class SlidingWindower:
    """Online packer: resamples an incoming frame stream onto the model grid
    and emits a window every hop once the first full window accumulates.

    ``transform`` is applied to each window sequence before packing
    (per-window normalization in the live pipeline). Out-of-order frames are
    dropped and counted, never raised.
    """

    def __init__(self, js: JointSet | str, cfg: WindowConfig = WindowConfig(),
                 transform: Callable[[SkeletonSequence], SkeletonSequence] | None = None):
        self.joint_set = joint_set(js)
        self.cfg = cfg
        self.transform = transform
        self.buffer: deque = deque(maxlen=cfg.frames)
        self.dropped = 0
        self.received = 0
        self.emitted = 0
        self._t0 = None
        self._k = 0
        self._prev: SkeletonFrame | None = None
        self._since = 0

    def _grid(self, k):
        return self._t0 + k / self.cfg.model_fps

    def push(self, frame: SkeletonFrame) -> list[WindowTensor]:
        self.received += 1
        if self._prev is not None and frame.t < self._prev.t:
            self.dropped += 1
            return []
        if self._t0 is None:
            self._t0 = frame.t
        out = []
        while self._grid(self._k) <= frame.t + _EPS:
            g = self._grid(self._k)
            prev = self._prev
            chosen = prev if prev is not None and (g - prev.t) <= (frame.t - g) else frame
            self.buffer.append((g, chosen))
            self._k += 1
            self._since += 1
            if len(self.buffer) == self.cfg.frames and (
                    self.emitted == 0 or self._since >= self.cfg.hop_frames):
                out.append(self._emit())
        self._prev = frame
        return out

    def _emit(self) -> WindowTensor:
        self._since = 0
        self.emitted += 1
        t = np.array([g for g, _ in self.buffer])
        pos = np.array([f.joints for _, f in self.buffer])
        valid = np.array([f.valid for _, f in self.buffer])
        seq = SkeletonSequence(self.joint_set, pos, valid, t, self.cfg.model_fps)
        if self.transform is not None:
            seq = self.transform(seq)
        return pack(seq, self.cfg)


def sliding_windows(frames: Iterable[SkeletonFrame], js: JointSet | str,
                    cfg: WindowConfig = WindowConfig(), transform=None) -> Iterator[WindowTensor]:
    """Synchronous sliding-window packing over a frame iterable."""
    w = SlidingWindower(js, cfg, transform)
    for frame in frames:
        yield from w.push(frame)


def sequence_window(seq: SkeletonSequence, cfg: WindowConfig = WindowConfig()) -> WindowTensor:
    """Resample then pack: the single evaluation window of a sequence."""
    return pack(resample(seq, cfg.model_fps), cfg)
