"""Train the default classifier on synthetic actions and score it in-domain
and under a scale/yaw shift. Takes about five minutes on one core."""
import math
import sys
import time

from skelact.model import ModelConfig, TrainConfig
from skelact.skeleton import load_class_table
from skelact.synth import SynthConfig, domain_shift, generate
from skelact.train import Toggles, evaluate, train


def main(epochs=60):
    table = load_class_table("synth_classes")
    train_set = generate(SynthConfig(samples_per_class=50, seed=1))
    test_set = generate(SynthConfig(samples_per_class=10, seed=2))
    shifted = domain_shift(test_set, (1.5, math.pi / 3))
    toggles = Toggles(normalization=True)

    t0 = time.perf_counter()
    params, hist = train(ModelConfig(45, 8), TrainConfig(epochs=epochs, seed=0), toggles, train_set,
                         progress=lambda e, h: print(f"epoch {e + 1:3d}  loss {h.loss[-1]:.4f}  "
                                                     f"train acc {h.train_accuracy[-1]:.3f}"))
    print(f"trained {params.n_parameters:,} parameters in {time.perf_counter() - t0:.0f}s")

    for name, data in [("in-domain", test_set), ("shifted", shifted)]:
        report = evaluate(params, data, toggles)
        print(f"{name:<10} accuracy {report.accuracy:.3f}")
    print("confusion (shifted):")
    for name, row in zip(table.names, evaluate(params, shifted, toggles).confusion):
        print(f"  {name:<18} {' '.join(f'{c:2d}' for c in row)}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 60)
