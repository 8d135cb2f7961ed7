"""Training loop, evaluation reports and the eight-row ablation runner."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .augment import AugmentConfig, Augmenter
from .errors import DataError, ModelError
from .model import (ModelConfig, ModelParams, StepState, TrainConfig, init_params,
                    loss_grads_stats, predict_batch, sgd_step, update_running_stats)
from .preprocess import NormalizationConfig, normalize
from .skeleton import ClassTable, JointMap, SkeletonSequence, default_joint_map, remap
from .windowing import WindowConfig, WindowTensor, sequence_window

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Toggles:
    noise: bool = False
    augmentation: bool = False
    normalization: bool = False

    @property
    def label(self) -> str:
        parts = ["Baseline"]
        if self.normalization:
            parts.append("normalization")
        if self.augmentation:
            parts.append("augmentation")
        if self.noise:
            parts.append("noise")
        return " + ".join(parts)


# Row order of the reference ablation table: baseline first, all-on last.
ABLATION_GRID: tuple[Toggles, ...] = tuple(
    Toggles(noise=noise, augmentation=aug, normalization=norm)
    for norm in (False, True) for aug in (False, True) for noise in (False, True))

# Reference accuracies per row (NTU cross-subject test, recorded test set),
# reported alongside desk-scale results for orientation only.
REFERENCE_ACCURACY = {
    "Baseline": (0.74, 0.2098),
    "Baseline + noise": (0.7517, 0.2345),
    "Baseline + augmentation": (0.753, 0.1604),
    "Baseline + augmentation + noise": (0.743, 0.2592),
    "Baseline + normalization": (0.746, 0.4071),
    "Baseline + normalization + noise": (0.716, 0.3703),
    "Baseline + normalization + augmentation": (0.70, 0.4938),
    "Baseline + normalization + augmentation + noise": (0.689, 0.4691),
}


@dataclass
class Pipeline:
    """Per-sample preprocessing shared by training, evaluation and streaming."""

    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    joint_map: JointMap | None = None

    def window_for(self, seq: SkeletonSequence, normalize_: bool) -> tuple[WindowTensor, float]:
        """remap -> [normalize] -> resample -> pack; returns the window and
        the normalization scale factor (1 when not normalized)."""
        jmap = self.joint_map or default_joint_map(seq.joint_set)
        seq = remap(seq, jmap)
        s = 1.0
        if normalize_ and self.normalization.enabled:
            seq = normalize(seq, self.normalization)
            s = seq.provenance.get("scale", 1.0)
        return sequence_window(seq, self.window), s


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.loss)


def _stack(windows):
    x = np.stack([w.data for w in windows]).astype(np.float32)
    fm = np.stack([w.frame_mask for w in windows])
    return x, fm


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, toggles: Toggles,
          sequences: Sequence[SkeletonSequence], pipeline: Pipeline | None = None,
          augment_cfg: AugmentConfig | None = None, params: ModelParams | None = None,
          progress=None) -> tuple[ModelParams, History]:
    """Shuffled minibatch SGD with momentum; deterministic given ``train_cfg.seed``.

    With ``train_cfg.target_train_accuracy`` set, training stops after the
    first epoch whose EVAL-mode accuracy on the clean training windows reaches
    it.
    """
    if not sequences:
        raise DataError("empty training split")
    pipeline = pipeline or Pipeline()
    augment_cfg = augment_cfg or AugmentConfig()
    prepared = [pipeline.window_for(s, toggles.normalization) for s in sequences]
    windows = [w for w, _ in prepared]
    scales = np.array([s for _, s in prepared])
    labels = np.array([s.label for s in sequences])
    if any(l is None for l in labels):
        raise DataError("training sequences must be labelled")
    labels = labels.astype(int)
    augmenter = Augmenter(augment_cfg, noise=toggles.noise, augmentation=toggles.augmentation)
    use_aug = toggles.noise or toggles.augmentation

    params = params.copy() if params is not None else init_params(model_cfg, train_cfg.seed)
    state = StepState()
    history = History()
    t0 = time.perf_counter()
    base_x, base_fm = _stack(windows)
    n = len(windows)
    for epoch in range(train_cfg.epochs):
        state.epoch = epoch
        lr = train_cfg.lr_at(epoch)
        rng = np.random.default_rng([train_cfg.seed, epoch])
        order = rng.permutation(n)
        total_loss = 0.0
        for b in range(0, n, train_cfg.batch_size):
            idx = order[b:b + train_cfg.batch_size]
            if use_aug:
                batch = [augmenter(windows[i], np.random.default_rng(
                    [train_cfg.seed, epoch, int(i), augment_cfg.seed]), scales[i]) for i in idx]
                x, fm = _stack(batch)
            else:
                x, fm = base_x[idx], base_fm[idx]
            drop_rng = np.random.default_rng([train_cfg.seed, epoch, b, 7])
            loss, grads, stats = loss_grads_stats(params, x, fm, labels[idx],
                                                  train_cfg.weight_decay, drop_rng)
            if lr > 0:
                sgd_step(params, grads, train_cfg, state, lr=lr)
            update_running_stats(params, stats)
            total_loss += loss * len(idx)
        if not params.all_finite():
            raise ModelError(f"parameters diverged in epoch {epoch}")
        history.loss.append(total_loss / n)
        history.lr.append(lr)
        preds, _ = predict_batch(params, windows)
        acc = float(np.mean(np.array(preds) == labels))
        history.train_accuracy.append(acc)
        if progress is not None:
            progress(epoch, history)
        log.debug("epoch %d loss %.4f acc %.3f", epoch, history.loss[-1], acc)
        if train_cfg.target_train_accuracy is not None and acc >= train_cfg.target_train_accuracy:
            break
    history.seconds = time.perf_counter() - t0
    return params, history


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    per_class_recall: np.ndarray
    fingerprint: str
    dataset_id: str
    predictions: list[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(),
                "per_class_recall": [None if np.isnan(r) else float(r) for r in self.per_class_recall],
                "fingerprint": self.fingerprint, "dataset_id": self.dataset_id, "total": self.total}


def fingerprint(*objs) -> str:
    def plain(o):
        if hasattr(o, "__dataclass_fields__"):
            return {k: plain(v) for k, v in asdict(o).items()}
        if hasattr(o, "value"):
            return o.value
        if isinstance(o, dict):
            return {str(k): plain(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [plain(v) for v in o]
        return o
    blob = json.dumps([plain(o) for o in objs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def dataset_id(sequences: Sequence[SkeletonSequence]) -> str:
    h = hashlib.sha256()
    for s in sequences:
        h.update(s.source.encode())
        h.update(np.ascontiguousarray(s.positions).tobytes())
    return h.hexdigest()[:12]


def report_from_predictions(preds, labels, num_classes, fp="", ds="") -> EvalReport:
    labels = np.asarray(labels, dtype=int)
    preds = np.asarray(preds, dtype=int)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    acc = float(np.trace(confusion) / confusion.sum()) if confusion.sum() else 0.0
    return EvalReport(acc, confusion, recall, fp, ds, preds.tolist())


def evaluate(params: ModelParams, sequences: Sequence[SkeletonSequence], toggles: Toggles,
             pipeline: Pipeline | None = None) -> EvalReport:
    """EVAL-mode prediction on one center window per sequence.

    Noise and augmentation toggles have no effect here.
    """
    pipeline = pipeline or Pipeline()
    k = params.config.num_classes
    bad = sorted({s.label for s in sequences if s.label is None or not 0 <= s.label < k},
                 key=lambda v: (v is None, v))
    if bad:
        raise DataError(f"labels outside [0, {k}): {bad}")
    windows = [pipeline.window_for(s, toggles.normalization)[0] for s in sequences]
    preds, _ = predict_batch(params, windows)
    fp = fingerprint(params.config, Toggles(normalization=toggles.normalization),
                     pipeline.normalization, pipeline.window)
    return report_from_predictions(preds, [s.label for s in sequences], k, fp, dataset_id(sequences))


def map_labels(sequences: Sequence[SkeletonSequence], source: ClassTable,
               target: ClassTable) -> list[SkeletonSequence]:
    """Re-label sequences from ``source`` ids into ``target`` ids via the
    shared dataset ids; raises listing every class that cannot be mapped."""
    present = sorted({s.label for s in sequences if s.label is not None})
    by_src = {e.source_dataset_id: e.class_id for e in target.entries
              if e.source_dataset_id is not None}
    unmapped = [source.name_of(i) for i in present
                if source.entries[i].source_dataset_id not in by_src]
    if unmapped:
        raise DataError(f"classes without a mapping: {', '.join(unmapped)}")
    table = {i: by_src[source.entries[i].source_dataset_id] for i in present}
    return [s.replace(label=None if s.label is None else table[s.label]) for s in sequences]


@dataclass
class AblationRow:
    toggles: Toggles
    acc_in_domain: float
    acc_shifted: float
    train_accuracy: float
    epochs: int

    @property
    def label(self) -> str:
        return self.toggles.label


CSV_FIELDS = ["config", "noise", "augmentation", "normalization", "acc_in_domain", "acc_shifted"]


def run_ablation(model_cfg: ModelConfig, train_cfg: TrainConfig, train_seqs, in_domain, shifted,
                 pipeline: Pipeline | None = None, augment_cfg: AugmentConfig | None = None,
                 grid: Sequence[Toggles] = ABLATION_GRID, progress=None) -> list[AblationRow]:
    """Train one model per grid row from the same initial seed and score it
    on the in-domain and shifted test sets."""
    rows = []
    for toggles in grid:
        params, hist = train(model_cfg, train_cfg, toggles, train_seqs, pipeline, augment_cfg)
        row = AblationRow(toggles,
                          evaluate(params, in_domain, toggles, pipeline).accuracy,
                          evaluate(params, shifted, toggles, pipeline).accuracy,
                          hist.train_accuracy[-1] if hist.train_accuracy else float("nan"),
                          hist.epochs)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        t = r.toggles
        w.writerow([r.label, int(t.noise), int(t.augmentation), int(t.normalization),
                    f"{r.acc_in_domain:.4f}", f"{r.acc_shifted:.4f}"])
    return buf.getvalue()


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """Aligned text table with the reference accuracies alongside."""
    width = max(len(r.label) for r in rows)
    head = f"{'config':<{width}}  {'in-domain':>9}  {'shifted':>8}  {'ref NTU':>8}  {'ref rec':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ref = REFERENCE_ACCURACY.get(r.label, (float("nan"),) * 2)
        lines.append(f"{r.label:<{width}}  {r.acc_in_domain:>9.1%}  {r.acc_shifted:>8.1%}  "
                     f"{ref[0]:>8.1%}  {ref[1]:>8.1%}")
    return "\n".join(lines)
