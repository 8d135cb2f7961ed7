import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import TINY, gradient_check, tiny_problem
from skelact.errors import ConfigError, DataError, ModelError
from skelact.model import (MAGIC, ModelConfig, StepState, TrainConfig, forward, forward_batch,
                           init_params, load_checkpoint, loss_and_grads, loss_grads_stats,
                           model_info, predict, predict_batch, save_checkpoint, sgd_step, softmax,
                           update_running_stats, zero_params)
from skelact.windowing import WindowTensor


def win(d=45, t=90, seed=0, label=None):
    rng = np.random.default_rng(seed)
    return WindowTensor(rng.normal(size=(t, d)), np.ones((t, d // 3), bool), label)


def test_zero_network_uniform():
    cfg = ModelConfig(45, 5)
    logits = forward(zero_params(cfg), win())
    np.testing.assert_array_equal(logits, 0)
    np.testing.assert_allclose(softmax(logits), 0.2)


@pytest.mark.parametrize("stages, k", [(((1, 8, 1),), 3), (((1, 8, 2), (2, 16, 2)), 5),
                                       (((2, 64, 1), (2, 128, 2), (2, 256, 2)), 8)])
def test_logit_shape(stages, k):
    cfg = ModelConfig(45, 7, stem_filters=8, stages=stages, kernel_size=k)
    assert forward(init_params(cfg), win()).shape == (7,)


def test_eval_deterministic():
    p = init_params(ModelConfig(45, 4, stem_filters=8, stages=((1, 8, 2),)))
    w = win()
    np.testing.assert_array_equal(forward(p, w), forward(p, w))


def test_shape_mismatch_names_d():
    p = init_params(ModelConfig(45, 4, stem_filters=8, stages=((1, 8, 1),)))
    with pytest.raises(ModelError) as err:
        forward(p, win(d=57))
    assert "45" in str(err.value) and "57" in str(err.value)


def test_config_invariants():
    with pytest.raises(ConfigError):
        ModelConfig(45, 1)
    with pytest.raises(ConfigError):
        ModelConfig(45, 3, stages=((1, 8, 3),))
    with pytest.raises(ConfigError):
        ModelConfig(45, 3, kernel_size=0)


def test_ln2_loss():
    cfg = ModelConfig(6, 2, stem_filters=2, stages=((1, 2, 1),), kernel_size=1)
    loss, _ = loss_and_grads(zero_params(cfg), [(win(d=6, t=4), 0)], weight_decay=0.0)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_gradient_check_every_layer():
    errors = gradient_check(*tiny_problem())
    kinds = {"stem", "conv1", "conv2", "proj", "bn1", "bn2", "head.bn", "fc"}
    assert all(any(k in name for name in errors) for k in kinds)
    assert max(errors.values()) <= 1e-4, errors


def test_duplicated_batch_same_loss():
    params, x, fm, labels = tiny_problem()
    cfg = ModelConfig(**{**TINY.to_dict(), "dropout_prob": 0.0})
    p = type(params)(cfg, params.tensors)
    single = loss_grads_stats(p, x[:1], fm[:1], labels[:1], 0.0)[0]
    double = loss_grads_stats(p, np.concatenate([x[:1]] * 2), np.concatenate([fm[:1]] * 2),
                              np.concatenate([labels[:1]] * 2), 0.0)[0]
    assert double == pytest.approx(single, rel=1e-12)


def test_nonfinite_loss_names_layer():
    params, x, fm, labels = tiny_problem()
    params.tensors["s1.b0.conv1.w"][0, 0, 0] = np.inf
    with pytest.raises(ModelError) as err:
        loss_grads_stats(params, x, fm, labels)
    assert "s1.b0" in str(err.value)


def test_labels_out_of_range():
    params, x, fm, _ = tiny_problem()
    with pytest.raises(DataError):
        loss_grads_stats(params, x, fm, [0, 1, 2, 3])


def test_masked_steps_do_not_change_pooling():
    cfg = ModelConfig(6, 3, stem_filters=4, stages=((1, 4, 1),), kernel_size=1, dropout_prob=0.0)
    p = init_params(cfg, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 8, 6))
    fm = np.ones((1, 8), bool)
    fm[0, 5:] = False
    x[0, 5:] = 0
    padded, _ = forward_batch(p, x, fm)
    short, _ = forward_batch(p, x[:, :5], fm[:, :5])
    # kernel 1 has no temporal mixing, so masked steps are the only difference
    np.testing.assert_allclose(padded, short, atol=1e-12)


def test_sgd_zero_grads():
    p = init_params(TINY)
    before = p.copy()
    sgd_step(p, {k: np.zeros_like(p[k]) for k in p.trainable}, TrainConfig(), StepState())
    for k in p.tensors:
        np.testing.assert_array_equal(p[k], before[k])


def test_sgd_half_square():
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0)
    w = {"fc.b": np.array([1.0])}

    class P:
        tensors = w
    sgd_step(P, {"fc.b": w["fc.b"].copy()}, cfg, StepState())  # grad of w^2/2 is w
    assert w["fc.b"][0] == pytest.approx(0.9)


def test_sgd_momentum_unroll():
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    w = {"fc.b": np.array([0.0])}

    class P:
        tensors = w
    state = StepState()
    g = {"fc.b": np.array([2.0])}
    sgd_step(P, g, cfg, state)
    first = -w["fc.b"][0]
    sgd_step(P, g, cfg, state)
    second = -w["fc.b"][0] - first
    assert first == pytest.approx(0.1 * 2.0)
    assert second == pytest.approx(1.9 * 0.1 * 2.0)


def test_lr_milestones():
    cfg = TrainConfig(learning_rate=0.01, lr_milestones=(10, 20))
    assert [cfg.lr_at(e) for e in (0, 9, 10, 19, 20)] == pytest.approx([0.01, 0.01, 1e-3, 1e-3, 1e-4])
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_uniform_logits_tie_to_zero():
    cfg = ModelConfig(45, 4, stem_filters=2, stages=((1, 2, 1),), kernel_size=1)
    cls, probs = predict(zero_params(cfg), win())
    assert cls == 0 and probs.sum() == pytest.approx(1.0, abs=1e-9)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.floats(-100, 100))
def test_softmax_shift_invariance(logits, c):
    z = np.array(logits)
    p = softmax(z)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)
    assert np.argmax(softmax(z + c)) == np.argmax(p)


def test_running_stats_update():
    params, x, fm, labels = tiny_problem()
    _, _, stats = loss_grads_stats(params, x, fm, labels)
    before = params["stem.w"].copy(), params["s0.b0.bn1.mean"].copy()
    update_running_stats(params, stats)
    mean, _ = stats["s0.b0.bn1"]
    np.testing.assert_allclose(params["s0.b0.bn1.mean"], 0.9 * before[1] + 0.1 * mean)


def test_predict_batch_matches_single():
    p = init_params(ModelConfig(45, 4, stem_filters=8, stages=((1, 8, 2),)))
    ws = [win(seed=i) for i in range(5)]
    preds, probs = predict_batch(p, ws, batch_size=2)
    for w, c, pr in zip(ws, preds, probs):
        c1, p1 = predict(p, w)
        assert c == c1
        np.testing.assert_allclose(pr, p1, rtol=1e-5)


def test_default_parameter_count():
    # default class table has 8 classes; the 60-class table stays under the hard cap
    info = model_info(ModelConfig(45, 8))
    assert info["parameters"] == 2_494_600 < 2_500_000
    assert model_info(ModelConfig(45, 60))["parameters"] < 5_000_000
    assert info["parameters"] == init_params(ModelConfig(45, 8)).n_parameters


def test_checkpoint_roundtrip_and_determinism(tmp_path):
    p = init_params(ModelConfig(45, 8, stem_filters=8, stages=((1, 8, 2),)), seed=3)
    meta = {"class_names": ["a", "b"], "epochs": 1}
    a = save_checkpoint(p, tmp_path / "m.bin", meta)
    b = save_checkpoint(p, io.BytesIO(), dict(reversed(list(meta.items()))))
    assert a == b and a.startswith(MAGIC)
    q, m = load_checkpoint(tmp_path / "m.bin")
    assert m == meta and q.config == p.config
    for k in p.tensors:
        np.testing.assert_array_equal(q[k], p[k])
    w = win()
    np.testing.assert_array_equal(forward(q, w), forward(p, w))


def test_checkpoint_rejects_garbage():
    with pytest.raises(DataError):
        load_checkpoint(b"NOTCKPT" + bytes(10))
    data = save_checkpoint(init_params(TINY), None)
    with pytest.raises(DataError):
        load_checkpoint(data[:-4])
