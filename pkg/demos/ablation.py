"""Eight-row ablation over noise, augmentation and normalization. A reduced
network keeps the run near five minutes; pass ``--full`` for the default one."""
import math
import sys

from skelact.model import ModelConfig, TrainConfig
from skelact.synth import SynthConfig, domain_shift, generate
from skelact.train import ablation_csv, ablation_table, run_ablation


def main(full=False):
    train_set = generate(SynthConfig(samples_per_class=40, seed=1))
    in_domain = generate(SynthConfig(samples_per_class=10, seed=2))
    shifted = domain_shift(in_domain, (1.5, math.pi / 3))
    model = ModelConfig(45, 8) if full else ModelConfig(
        45, 8, stem_filters=32, stages=((1, 32, 1), (1, 64, 2), (1, 128, 2)))
    cfg = TrainConfig(epochs=40, seed=0, lr_milestones=(24, 34))
    rows = run_ablation(model, cfg, train_set, in_domain, shifted,
                        progress=lambda r: print(f"done: {r.label}", file=sys.stderr))
    print(ablation_table(rows))
    with open("ablation.csv", "w") as f:
        f.write(ablation_csv(rows))


if __name__ == "__main__":
    main("--full" in sys.argv)
