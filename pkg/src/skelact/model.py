"""Residual temporal convolutional classifier in plain numpy.

Activations are laid out ``(batch, time, channels)``. The network is

    stem conv -> [pre-activation residual blocks] -> BN -> ReLU
    -> masked global average pool -> dropout -> affine

Each residual block computes ``conv2(relu(bn2(conv1(relu(bn1(x)))))) + shortcut``,
where the shortcut is ``x`` or a strided 1x1 projection of ``relu(bn1(x))``.
Gradients are derived by hand; ``loss_and_grads`` is checked against
central finite differences in the test-suite.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, ModelError
from .windowing import WindowTensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
MAGIC = b"SKTCN1"


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int
    num_classes: int
    stem_filters: int = 64
    stages: tuple[tuple[int, int, int], ...] = ((2, 64, 1), (2, 128, 2), (2, 256, 2))
    kernel_size: int = 8
    dropout_prob: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        if self.kernel_size < 1:
            raise ConfigError("must be >= 1", "model.kernel_size")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes", "model.num_classes")
        if self.input_channels < 1 or self.stem_filters < 1:
            raise ConfigError("channel counts must be positive", "model")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError("must be in [0, 1)", "model.dropout_prob")
        for blocks, filters, stride in self.stages:
            if stride not in (1, 2):
                raise ConfigError(f"stride {stride} not in {{1, 2}}", "model.stages")
            if blocks < 1 or filters < 1:
                raise ConfigError("blocks and filters must be positive", "model.stages")

    def blocks(self):
        """``(name, in_channels, out_channels, stride)`` for every residual block."""
        out, cin = [], self.stem_filters
        for si, (n, filters, stride) in enumerate(self.stages):
            for bi in range(n):
                s = stride if bi == 0 else 1
                out.append((f"s{si}.b{bi}", cin, filters, s))
                cin = filters
        return out

    @property
    def out_features(self) -> int:
        return self.stages[-1][1] if self.stages else self.stem_filters

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """Declaration order of every tensor with its shape and kind
    (``weight``, ``gamma``, ``beta``, ``bias``, ``buffer``)."""
    k = cfg.kernel_size
    shapes = {"stem.w": ((cfg.stem_filters, cfg.input_channels, k), "weight")}

    def bn(name, c):
        shapes[f"{name}.gamma"] = ((c,), "gamma")
        shapes[f"{name}.beta"] = ((c,), "beta")
        shapes[f"{name}.mean"] = ((c,), "buffer")
        shapes[f"{name}.var"] = ((c,), "buffer")

    for name, cin, cout, stride in cfg.blocks():
        bn(f"{name}.bn1", cin)
        shapes[f"{name}.conv1.w"] = ((cout, cin, k), "weight")
        bn(f"{name}.bn2", cout)
        shapes[f"{name}.conv2.w"] = ((cout, cout, k), "weight")
        if cin != cout or stride != 1:
            shapes[f"{name}.proj.w"] = ((cout, cin, 1), "weight")
    bn("head.bn", cfg.out_features)
    shapes["fc.w"] = ((cfg.num_classes, cfg.out_features), "weight")
    shapes["fc.b"] = ((cfg.num_classes,), "bias")
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if list(self.tensors) != list(shapes):
            raise ModelError("tensor names do not match the model configuration")
        for name, (shape, _) in shapes.items():
            if self.tensors[name].shape != shape:
                raise ModelError(f"shape {self.tensors[name].shape} != {shape}", name)

    @property
    def trainable(self) -> list[str]:
        return [n for n, (_, kind) in param_shapes(self.config).items() if kind != "buffer"]

    @property
    def decayed(self) -> list[str]:
        return [n for n, (_, kind) in param_shapes(self.config).items() if kind == "weight"]

    @property
    def n_parameters(self) -> int:
        return int(sum(self.tensors[n].size for n in self.trainable))

    @property
    def dtype(self):
        return self.tensors["fc.w"].dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def __getitem__(self, name):
        return self.tensors[name]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """He-normal convolutions, unit BN scale, small random affine head."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (shape, kind) in param_shapes(cfg).items():
        if kind == "weight" and name != "fc.w":
            fan_in = shape[1] * shape[2]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
        elif name == "fc.w":
            tensors[name] = rng.normal(0.0, np.sqrt(1.0 / shape[1]), shape)
        elif kind == "gamma" or name.endswith(".var"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(cfg, {k: v.astype(dtype) for k, v in tensors.items()})


def zero_params(cfg: ModelConfig, dtype=np.float64) -> ModelParams:
    tensors = {name: (np.ones(shape) if name.endswith(".var") else np.zeros(shape)).astype(dtype)
               for name, (shape, _) in param_shapes(cfg).items()}
    return ModelParams(cfg, tensors)


# Layer kernels.

def _conv_forward(x, w, stride):
    n, t, c = x.shape
    f, _, k = w.shape
    left = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (left, k - 1 - left), (0, 0))) if k > 1 else x
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]  # (n, t_out, c, k)
    t_out = win.shape[1]
    cols = win.reshape(n * t_out, c * k)
    y = cols @ w.reshape(f, c * k).T
    return y.reshape(n, t_out, f), (cols, x.shape)


def _conv_backward(dy, w, cache, stride):
    cols, (n, t, c) = cache
    f, _, k = w.shape
    t_out = dy.shape[1]
    dy2 = dy.reshape(n * t_out, f)
    dw = (dy2.T @ cols).reshape(w.shape)
    dcols = (dy2 @ w.reshape(f, c * k)).reshape(n, t_out, c, k)
    left = (k - 1) // 2
    dxp = np.zeros((n, t + k - 1, c), dtype=dy.dtype)
    span = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[:, j:j + span:stride] += dcols[:, :, :, j]
    return dxp[:, left:left + t], dw


def _bn_forward(x, gamma, beta, mean, var, train):
    if train:
        mu = x.mean(axis=(0, 1))
        sigma2 = x.var(axis=(0, 1))
    else:
        mu, sigma2 = mean, var
    inv = 1.0 / np.sqrt(sigma2 + BN_EPS)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv), (mu, sigma2)


def _bn_backward(dy, gamma, cache):
    xhat, inv = cache
    m = dy.shape[0] * dy.shape[1]
    dgamma = np.sum(dy * xhat, axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * gamma
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * np.sum(dxhat * xhat, axis=(0, 1)))
    return dx, dgamma, dbeta


@dataclass
class _Tape:
    train: bool
    ops: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)


class _Net:
    """Forward/backward over one ``ModelParams``; keeps the tape of cached values."""

    def __init__(self, params: ModelParams):
        self.p = params.tensors
        self.cfg = params.config

    def bn_relu(self, tape, name, x):
        p = self.p
        y, cache, (mu, var) = _bn_forward(x, p[f"{name}.gamma"], p[f"{name}.beta"],
                                          p[f"{name}.mean"], p[f"{name}.var"], tape.train)
        if tape.train:
            tape.stats[name] = (mu, var)
        relu = y > 0
        tape.ops.append(("bn_relu", name, cache, relu))
        return y * relu

    def conv(self, tape, name, x, stride):
        y, cache = _conv_forward(x, self.p[name], stride)
        tape.ops.append(("conv", name, cache, stride))
        return y

    def forward(self, x, frame_mask, train, rng=None):
        cfg, p = self.cfg, self.p
        tape = _Tape(train)
        h = self.conv(tape, "stem.w", x, 1)
        tape.checkpoints.append(("stem", h))
        mask = frame_mask
        blocks = []
        for name, cin, cout, stride in cfg.blocks():
            a1 = self.bn_relu(tape, f"{name}.bn1", h)
            c1 = self.conv(tape, f"{name}.conv1.w", a1, stride)
            a2 = self.bn_relu(tape, f"{name}.bn2", c1)
            c2 = self.conv(tape, f"{name}.conv2.w", a2, 1)
            if f"{name}.proj.w" in p:
                sc = self.conv(tape, f"{name}.proj.w", a1, stride)
            else:
                sc = h
            h = c2 + sc
            mask = mask[:, ::stride]
            blocks.append(name)
            tape.checkpoints.append((name, h))
        a = self.bn_relu(tape, "head.bn", h)
        m = mask.astype(a.dtype)
        count = np.maximum(m.sum(axis=1), 1.0)
        pooled = np.einsum("ntc,nt->nc", a, m) / count[:, None]
        drop = None
        if train and cfg.dropout_prob > 0:
            keep = 1.0 - cfg.dropout_prob
            drop = (rng.random(pooled.shape) < keep).astype(a.dtype) / keep
            pooled = pooled * drop
        logits = pooled @ p["fc.w"].T + p["fc.b"]
        tape.checkpoints.append(("fc", logits))
        tape.head = (m, count, drop, pooled, blocks)
        return logits, tape

    def backward(self, tape, dlogits):
        p, grads = self.p, {}
        m, count, drop, pooled, blocks = tape.head
        grads["fc.w"] = dlogits.T @ pooled
        grads["fc.b"] = dlogits.sum(axis=0)
        dpooled = dlogits @ p["fc.w"]
        if drop is not None:
            dpooled = dpooled * drop
        da = (dpooled / count[:, None])[:, None, :] * m[:, :, None]

        ops = iter(reversed(tape.ops))

        def bn_relu_back(dy):
            _, name, cache, relu = next(ops)
            dx, grads[f"{name}.gamma"], grads[f"{name}.beta"] = _bn_backward(
                dy * relu, p[f"{name}.gamma"], cache)
            return dx

        def conv_back(dy):
            _, name, cache, stride = next(ops)
            dx, grads[name] = _conv_backward(dy, p[name], cache, stride)
            return dx

        dh = bn_relu_back(da)
        for name in reversed(blocks):
            has_proj = f"{name}.proj.w" in p
            if has_proj:
                da1_sc = conv_back(dh)
            dc1 = bn_relu_back(conv_back(dh))
            da1 = conv_back(dc1)
            if has_proj:
                da1 = da1 + da1_sc
            dx = bn_relu_back(da1)
            dh = dx if has_proj else dx + dh
        conv_back(dh)
        return grads


def _as_batch(windows, dtype):
    x = np.stack([w.data for w in windows]).astype(dtype, copy=False)
    fm = np.stack([w.frame_mask for w in windows])
    return x, fm


def _check_input(params, x):
    d = params.config.input_channels
    if x.ndim != 3 or x.shape[2] != d:
        raise ModelError(f"expected input channels D={d}, got D={x.shape[-1]}", "input")


def forward_batch(params: ModelParams, x, frame_mask, train: bool = False, rng=None):
    """Logits for a batch ``x`` of shape ``(N, T, D)``; returns ``(logits, tape)``."""
    x = np.asarray(x, dtype=params.dtype)
    _check_input(params, x)
    if train and rng is None:
        rng = np.random.default_rng(0)
    return _Net(params).forward(x, np.asarray(frame_mask, bool), train, rng)


def forward(params: ModelParams, window: WindowTensor, mode: str = "EVAL", rng=None) -> np.ndarray:
    """Logits (length K) for one window; ``mode`` is ``"TRAIN"`` or ``"EVAL"``."""
    if mode not in ("TRAIN", "EVAL"):
        raise ValueError(f"mode must be TRAIN or EVAL, got {mode!r}")
    x, fm = _as_batch([window], params.dtype)
    logits, _ = forward_batch(params, x, fm, mode == "TRAIN", rng)
    return logits[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_from_logits(params, logits, labels, weight_decay):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    ce = -logp[np.arange(n), labels].mean()
    reg = 0.5 * weight_decay * sum(float(np.sum(params[k].astype(np.float64) ** 2))
                                   for k in params.decayed) if weight_decay else 0.0
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(ce) + reg, dlogits / n


def _first_nonfinite(tape):
    for name, value in tape.checkpoints:
        if not np.all(np.isfinite(value)):
            return name
    return "loss"


def loss_grads_stats(params: ModelParams, x, frame_mask, labels, weight_decay: float = 0.0,
                     rng=None):
    """Training-mode loss, gradients and the batch BN moments.

    Returns ``(loss, grads, stats)`` where ``stats`` maps BN layer names to
    ``(batch_mean, batch_var)``.
    """
    labels = np.asarray(labels, dtype=int)
    if len(labels) == 0:
        raise DataError("empty batch")
    if labels.min() < 0 or labels.max() >= params.config.num_classes:
        raise DataError(f"labels must lie in [0, {params.config.num_classes})")
    logits, tape = forward_batch(params, x, frame_mask, True, rng)
    loss, dlogits = _loss_from_logits(params, logits, labels, weight_decay)
    if not np.isfinite(loss):
        raise ModelError("non-finite loss", _first_nonfinite(tape))
    grads = _Net(params).backward(tape, dlogits.astype(params.dtype))
    if weight_decay:
        for k in params.decayed:
            grads[k] = grads[k] + weight_decay * params[k]
    grads = {k: grads[k] for k in params.trainable}
    return loss, grads, tape.stats


def loss_and_grads(params: ModelParams, batch: Sequence[tuple[WindowTensor, int]],
                   weight_decay: float = 0.0, rng=None):
    """Mean softmax cross-entropy plus ``weight_decay/2 * ||W||^2`` over
    convolution and affine weights, with exact gradients."""
    if not batch:
        raise DataError("empty batch")
    x, fm = _as_batch([w for w, _ in batch], params.dtype)
    loss, grads, _ = loss_grads_stats(params, x, fm, [y for _, y in batch], weight_decay, rng)
    return loss, grads


def update_running_stats(params: ModelParams, stats: dict) -> None:
    for name, (mu, var) in stats.items():
        params.tensors[f"{name}.mean"] *= BN_MOMENTUM
        params.tensors[f"{name}.mean"] += (1 - BN_MOMENTUM) * mu
        params.tensors[f"{name}.var"] *= BN_MOMENTUM
        params.tensors[f"{name}.var"] += (1 - BN_MOMENTUM) * var


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 60
    lr_milestones: tuple[int, ...] = ()
    weight_decay: float = 1e-4
    seed: int = 0
    target_train_accuracy: float | None = None

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        if not self.learning_rate >= 0:
            raise ConfigError("must be >= 0", "train.learning_rate")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "train.batch_size")
        if self.epochs < 0:
            raise ConfigError("must be >= 0", "train.epochs")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must be in [0, 1)", "train.momentum")
        if self.weight_decay < 0:
            raise ConfigError("must be >= 0", "train.weight_decay")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * 0.1 ** sum(epoch >= m for m in self.lr_milestones)


@dataclass
class StepState:
    epoch: int = 0
    step: int = 0
    velocity: dict = field(default_factory=dict)


def sgd_step(params: ModelParams, grads: dict, train_cfg: TrainConfig,
             state: StepState, lr: float | None = None) -> ModelParams:
    """Classical momentum: ``v <- mu*v + g``, ``w <- w - lr*v`` (in place)."""
    lr = train_cfg.lr_at(state.epoch) if lr is None else lr
    for name, g in grads.items():
        v = state.velocity.get(name)
        v = g.copy() if v is None else train_cfg.momentum * v + g
        state.velocity[name] = v
        params.tensors[name] -= (lr * v).astype(params.tensors[name].dtype)
    state.step += 1
    return params


def predict(params: ModelParams, window: WindowTensor) -> tuple[int, np.ndarray]:
    """EVAL-mode ``(argmax class, probabilities)``; ties go to the lowest id."""
    probs = softmax(forward(params, window, "EVAL").astype(np.float64))
    return int(np.argmax(probs)), probs


def predict_batch(params: ModelParams, windows: Sequence[WindowTensor], batch_size: int = 64):
    preds, probs = [], []
    for i in range(0, len(windows), batch_size):
        x, fm = _as_batch(windows[i:i + batch_size], params.dtype)
        logits, _ = forward_batch(params, x, fm, False)
        p = softmax(logits.astype(np.float64))
        preds.extend(int(k) for k in np.argmax(p, axis=1))
        probs.extend(p)
    return preds, probs


# Checkpoints: MAGIC, uint32 LE header length, JSON header, then float32 LE
# tensors in declaration order.

def save_checkpoint(params: ModelParams, path_or_stream, meta: dict | None = None) -> bytes:
    header = {"format": 1, "model": params.config.to_dict(), "meta": meta or {},
              "tensors": [[k, list(v.shape)] for k, v in params.tensors.items()]}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for v in params.tensors.values():
        buf.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    data = buf.getvalue()
    if path_or_stream is not None:
        if hasattr(path_or_stream, "write"):
            path_or_stream.write(data)
        else:
            with open(path_or_stream, "wb") as fh:
                fh.write(data)
    return data


def load_checkpoint(path_or_bytes) -> tuple[ModelParams, dict]:
    """Returns ``(params as float32, meta)``."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        try:
            with open(path_or_bytes, "rb") as fh:
                data = fh.read()
        except OSError as e:
            raise DataError(f"cannot read checkpoint {path_or_bytes}: {e}") from None
    if data[:len(MAGIC)] != MAGIC:
        raise DataError("not a checkpoint (bad magic)")
    (n,) = struct.unpack_from("<I", data, len(MAGIC))
    off = len(MAGIC) + 4
    header = json.loads(data[off:off + n])
    off += n
    cfg = ModelConfig(**header["model"])
    tensors = {}
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        if off + 4 * size > len(data):
            raise DataError(f"checkpoint truncated in tensor {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    if off != len(data):
        raise DataError("checkpoint has trailing or missing bytes")
    return ModelParams(cfg, tensors), header.get("meta", {})


def model_info(cfg: ModelConfig) -> dict:
    shapes = param_shapes(cfg)
    trainable = {k: s for k, (s, kind) in shapes.items() if kind != "buffer"}
    return {"config": cfg.to_dict(),
            "parameters": int(sum(np.prod(s) for s in trainable.values())),
            "layers": {k: list(s) for k, s in trainable.items()}}
