"""Replay a 20 s synthetic recording through the threaded pipeline at real
time and print each label as it is published, then the per-stage counters."""
import tempfile
from pathlib import Path

import numpy as np

from skelact.ingest import write_recording
from skelact.model import ModelConfig, TrainConfig
from skelact.preprocess import NormalizationConfig
from skelact.skeleton import COMMON, JointMap, SkeletonSequence, load_class_table
from skelact.stream import replay_source, run_stream
from skelact.synth import SynthConfig, generate
from skelact.train import Toggles, train
from skelact.windowing import WindowConfig


def main():
    table = load_class_table("synth_classes")
    small = ModelConfig(45, 8, stem_filters=16, stages=((1, 16, 2), (1, 32, 2)), kernel_size=5)
    params, _ = train(small, TrainConfig(epochs=20, seed=0), Toggles(normalization=True),
                      generate(SynthConfig(samples_per_class=20, seed=1)))

    clips = generate(SynthConfig(samples_per_class=1, seed=9))[:7]
    pos = np.concatenate([c.positions for c in clips])[:600]
    truth = [table.names[c.label] for c in clips]
    n = len(pos)
    rec = SkeletonSequence(COMMON, pos, np.ones((n, 15), bool), np.arange(n) / 30, 30.0)
    path = Path(tempfile.mkdtemp()) / "session.jsonl"
    path.write_text(write_recording(rec))
    print("played actions:", ", ".join(truth))

    stats = run_stream(replay_source(path, 1.0), JointMap.identity(COMMON), NormalizationConfig(),
                       WindowConfig(), params,
                       lambda m: print(f"t={m.t_window_end:5.2f}s  {m.class_name:<18} "
                                       f"p={m.probability:.2f}  latency {m.latency_ms:.1f} ms"),
                       class_names=table.names)
    for name, s in stats.items():
        print(f"{name:<10} {s}")


if __name__ == "__main__":
    main()
