import csv
import io

import numpy as np
import pytest

from skelact.errors import DataError
from skelact.model import ModelConfig, TrainConfig, init_params, save_checkpoint
from skelact.skeleton import load_class_table
from skelact.synth import SynthConfig, generate
from skelact.train import (ABLATION_GRID, CSV_FIELDS, REFERENCE_ACCURACY, Toggles, ablation_csv,
                           ablation_table, evaluate, map_labels, report_from_predictions,
                           run_ablation, train)

SMALL_NET = ModelConfig(45, 8, stem_filters=8, stages=((1, 8, 2), (1, 16, 2)), kernel_size=3)
DATA = generate(SynthConfig(samples_per_class=3, seed=1))
HELD = generate(SynthConfig(samples_per_class=2, seed=2))


def test_grid_order():
    assert len(ABLATION_GRID) == 8
    assert ABLATION_GRID[0] == Toggles()
    assert ABLATION_GRID[-1] == Toggles(True, True, True)
    assert [t.label for t in ABLATION_GRID] == list(REFERENCE_ACCURACY)
    assert REFERENCE_ACCURACY["Baseline"] == (0.74, 0.2098)
    assert REFERENCE_ACCURACY["Baseline + normalization + augmentation"] == (0.70, 0.4938)


def test_lr_zero_keeps_weights():
    init = init_params(SMALL_NET, seed=0)
    params, hist = train(SMALL_NET, TrainConfig(learning_rate=0.0, epochs=1, batch_size=8),
                         Toggles(True, True, True), DATA, params=init.copy())
    assert hist.epochs == 1
    for name in init.trainable:
        np.testing.assert_array_equal(params[name], init[name])


def test_training_deterministic():
    cfg = TrainConfig(epochs=2, batch_size=8, seed=3)
    a, ha = train(SMALL_NET, cfg, Toggles(True, True, True), DATA)
    b, hb = train(SMALL_NET, cfg, Toggles(True, True, True), DATA)
    assert save_checkpoint(a, None) == save_checkpoint(b, None)
    assert ha.loss == hb.loss and ha.train_accuracy == hb.train_accuracy
    c, _ = train(SMALL_NET, TrainConfig(epochs=2, batch_size=8, seed=4), Toggles(True, True, True), DATA)
    assert save_checkpoint(a, None) != save_checkpoint(c, None)


def test_history_records_each_epoch():
    _, hist = train(SMALL_NET, TrainConfig(epochs=3, batch_size=8, lr_milestones=(2,)), Toggles(), DATA)
    assert hist.epochs == 3 and len(hist.train_accuracy) == 3
    assert hist.lr == pytest.approx([0.01, 0.01, 0.001])
    assert all(0 <= a <= 1 for a in hist.train_accuracy)


def test_early_stop_on_target():
    _, hist = train(SMALL_NET, TrainConfig(epochs=5, batch_size=8, target_train_accuracy=0.0),
                    Toggles(), DATA)
    assert hist.epochs == 1


def test_empty_training_set():
    with pytest.raises(DataError):
        train(SMALL_NET, TrainConfig(epochs=1), Toggles(), [])


def test_report_all_correct():
    r = report_from_predictions([0, 1, 2], [0, 1, 2], 3)
    assert r.accuracy == 1.0
    np.testing.assert_array_equal(r.confusion, np.eye(3, dtype=int))


def test_report_one_wrong():
    r = report_from_predictions([0, 1, 0], [0, 1, 2], 3)
    assert r.accuracy == pytest.approx(2 / 3)
    off = r.confusion - np.diag(np.diag(r.confusion))
    assert off.sum() == 1 and r.confusion[2, 0] == 1
    np.testing.assert_array_equal(r.confusion.sum(1), [1, 1, 1])
    assert r.accuracy == np.trace(r.confusion) / r.total


def test_evaluate_pure_and_train_only_toggles():
    params = init_params(SMALL_NET, seed=2)
    a = evaluate(params, HELD, Toggles(normalization=True))
    b = evaluate(params, HELD, Toggles(noise=True, augmentation=True, normalization=True))
    assert a.to_dict() == b.to_dict()
    assert a.total == len(HELD)
    np.testing.assert_array_equal(a.confusion.sum(1), np.bincount([s.label for s in HELD], minlength=8))


def test_evaluate_rejects_out_of_range_labels():
    params = init_params(ModelConfig(45, 2, stem_filters=4, stages=((1, 4, 1),), kernel_size=3))
    with pytest.raises(DataError):
        evaluate(params, HELD, Toggles())


def test_map_labels_to_recorded_table():
    synth, rec = load_class_table("synth_classes"), load_class_table("recorded_classes")
    mapped = map_labels(HELD, synth, rec)
    for s, m in zip(HELD, mapped):
        assert rec.name_of(m.label) == synth.name_of(s.label)


def test_map_labels_lists_unmapped():
    rec, synth = load_class_table("recorded_classes"), load_class_table("synth_classes")
    seq = HELD[0].replace(label=rec.id_of("cough"))
    with pytest.raises(DataError, match="cough"):
        map_labels([seq], rec, synth)


def test_ablation_structure():
    cfg = TrainConfig(epochs=1, batch_size=8)
    rows = run_ablation(SMALL_NET, cfg, DATA, HELD, HELD)
    assert [r.toggles for r in rows] == list(ABLATION_GRID)
    parsed = list(csv.DictReader(io.StringIO(ablation_csv(rows))))
    assert list(parsed[0]) == CSV_FIELDS and len(parsed) == 8
    assert parsed[0]["config"] == "Baseline" and parsed[-1]["noise"] == "1"
    for r in parsed:
        assert 0 <= float(r["acc_in_domain"]) <= 1 and 0 <= float(r["acc_shifted"]) <= 1
    table = ablation_table(rows)
    assert len(table.splitlines()) == 10 and "20.98%" not in table.splitlines()[0]
    assert "21.0%" in table
