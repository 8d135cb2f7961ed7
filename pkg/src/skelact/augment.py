"""Training-time stochastic transforms: Gaussian joint noise, circular
temporal shift, and random crop with per-joint dropout.

Each transform takes an explicit ``numpy.random.Generator``; with the same
generator state the output is identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .windowing import WindowTensor


@dataclass(frozen=True)
class AugmentConfig:
    """``shift_max=None`` resolves to a quarter of the sequence length.

    ``noise_sigma`` is in meters of the raw skeleton; on normalized data the
    training loop multiplies it by the sequence's scale factor.
    """

    noise_sigma: float = 0.01
    shift_max: int | None = None
    crop_min_ratio: float = 0.7
    joint_dropout_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise ConfigError("must be >= 0", "augmentation.noise_sigma")
        if self.shift_max is not None and self.shift_max < 0:
            raise ConfigError("must be >= 0", "augmentation.shift_max")
        if not 0 < self.crop_min_ratio <= 1:
            raise ConfigError("must be in (0, 1]", "augmentation.crop_min_ratio")
        if not 0 <= self.joint_dropout_prob < 1:
            raise ConfigError("must be in [0, 1)", "augmentation.joint_dropout_prob")

    def resolved_shift(self, n_frames: int) -> int:
        return n_frames // 4 if self.shift_max is None else self.shift_max


# Array kernels over positions (N, J, 3) and valid (N, J).

def noise_arrays(pos, valid, sigma, rng):
    if sigma < 0:
        raise ConfigError("noise sigma must be >= 0", "augmentation.noise_sigma")
    if sigma == 0:
        return pos, valid
    noise = rng.normal(0.0, sigma, size=pos.shape)
    return np.where(valid[..., None], pos + noise, pos), valid


def shift_arrays(pos, valid, shift_max, rng, k=None):
    n = len(pos)
    m = min(int(shift_max), n - 1) if n else 0
    if k is None:
        k = int(rng.integers(-m, m + 1)) if m > 0 else 0
    if k == 0:
        return pos, valid
    return np.roll(pos, k, axis=0), np.roll(valid, k, axis=0)


def crop_arrays(pos, valid, ratio, dropout, rng, length=None, start=None):
    n = len(pos)
    if length is None:
        lo = max(1, math.ceil(ratio * n - 1e-9))
        length = int(rng.integers(lo, n + 1)) if lo < n else n
    if start is None:
        start = int(rng.integers(0, n - length + 1)) if length < n else 0
    if length < n or start:
        idx = start + np.arange(n) % length
        pos, valid = pos[idx], valid[idx]
    if dropout > 0:
        keep = rng.random(valid.shape) >= dropout
        valid = valid & keep
        pos = np.where(valid[..., None], pos, 0.0)
    return pos, valid


def _on_sequence(seq, fn, *args, **kw):
    if len(seq) == 0:
        raise ValueError("sequence must be non-empty")
    pos, valid = fn(seq.positions, seq.valid, *args, **kw)
    return seq.replace(positions=pos, valid=valid)


def _on_window(window, fn, *args, **kw):
    t, d = window.data.shape
    pos, valid = fn(window.data.reshape(t, d // 3, 3), window.mask, *args, **kw)
    return WindowTensor(np.asarray(pos).reshape(t, d), np.asarray(valid), window.label, window.t_end)


def add_noise(window: WindowTensor, sigma: float, rng: np.random.Generator) -> WindowTensor:
    """Independent ``N(0, sigma^2)`` on each coordinate of each unmasked joint."""
    return _on_window(window, noise_arrays, sigma, rng)


def temporal_shift(seq, shift_max: int, rng: np.random.Generator, k: int | None = None):
    """Circular shift by ``k ~ U{-shift_max..shift_max}`` (clamped to length-1).

    Accepts a :class:`SkeletonSequence` or a :class:`WindowTensor`.
    """
    if isinstance(seq, WindowTensor):
        return _on_window(seq, shift_arrays, shift_max, rng, k=k)
    return _on_sequence(seq, shift_arrays, shift_max, rng, k=k)


def random_crop(seq, crop_min_ratio: float, joint_dropout_prob: float,
                rng: np.random.Generator, length: int | None = None, start: int | None = None):
    """Keep a random contiguous run of at least ``ceil(ratio*N)`` frames,
    repeat-pad it back to ``N`` frames, then drop joints independently.

    ``length``/``start`` force the crop instead of sampling it.
    """
    if not 0 <= joint_dropout_prob < 1:
        raise ConfigError("must be in [0, 1)", "augmentation.joint_dropout_prob")
    if isinstance(seq, WindowTensor):
        return _on_window(seq, crop_arrays, crop_min_ratio, joint_dropout_prob, rng,
                          length=length, start=start)
    return _on_sequence(seq, crop_arrays, crop_min_ratio, joint_dropout_prob, rng,
                        length=length, start=start)


class Augmenter:
    """Composite train-time transform on packed windows: shift, crop, noise.

    ``augmentation`` and ``noise`` switch the two groups independently.
    """

    def __init__(self, cfg: AugmentConfig = AugmentConfig(), noise: bool = True,
                 augmentation: bool = True):
        self.cfg = cfg
        self.noise = noise
        self.augmentation = augmentation

    def __call__(self, window: WindowTensor, rng: np.random.Generator,
                 sigma_scale: float = 1.0) -> WindowTensor:
        if self.augmentation:
            window = temporal_shift(window, self.cfg.resolved_shift(len(window.data)), rng)
            window = random_crop(window, self.cfg.crop_min_ratio, self.cfg.joint_dropout_prob, rng)
        if self.noise:
            window = add_noise(window, self.cfg.noise_sigma * sigma_scale, rng)
        return window
