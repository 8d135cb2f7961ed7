import math

import numpy as np
import pytest

from skelact.errors import ConfigError
from skelact.ingest import load_recordings, write_recording
from skelact.preprocess import normalize
from skelact.skeleton import COMMON, load_class_table
from skelact.synth import (ARCHETYPES, SynthConfig, _animate, domain_shift, generate, rest_pose,
                           write_dataset)
from skelact.windowing import sequence_window

TABLE = load_class_table("synth_classes")
SMALL = SynthConfig(samples_per_class=3, seed=4)


def test_determinism_bytes():
    a = [write_recording(s, class_table=TABLE) for s in generate(SMALL)]
    b = [write_recording(s, class_table=TABLE) for s in generate(SMALL)]
    assert a == b
    c = [write_recording(s, class_table=TABLE) for s in generate(SynthConfig(samples_per_class=3, seed=5))]
    assert a != c


def test_layout_and_labels():
    seqs = generate(SMALL)
    assert len(seqs) == 8 * 3
    for s in seqs:
        assert s.joint_set == COMMON and len(s) == 90 and s.fps == 30.0
        assert TABLE.name_of(s.label) in ARCHETYPES
        assert np.all(np.diff(s.t) > 0) and s.valid.all()
    assert [TABLE.name_of(s.label) for s in seqs[::3]] == list(ARCHETYPES)


def test_wave_oscillates():
    u = np.arange(90) / 90
    x = _animate("wave_hand", u, 1.0, 1.0).positions()[:, COMMON.index("right_wrist"), 0]
    v = np.diff(x)
    v = v[np.abs(v) > 1e-9]
    assert np.sum(np.diff(np.sign(v)) != 0) >= 2


def test_sit_hip_descends():
    u = np.arange(90) / 90
    pos = _animate("sitting_down", u, 1.0, 1.0).positions()
    y = pos[:, COMMON.index("left_hip"), 1]
    assert np.all(np.diff(y) <= 1e-12)
    assert y[0] - y[-1] >= 0.3


def test_torso_lengths_follow_actor_scale():
    p = rest_pose()
    canonical = np.linalg.norm(p[COMMON.index("neck")] - p[COMMON.index("spine_base")])
    seqs = generate(SynthConfig(samples_per_class=25, jitter_sigma=0.0, seed=9))
    ratios = []
    for s in seqs:
        torso = np.linalg.norm(s.positions[:, COMMON.index("neck")] - s.positions[:, 0], axis=1)
        # lean and bending do not stretch the torso, so every frame matches the actor scale
        np.testing.assert_allclose(torso, canonical * s.provenance["actor_scale"], rtol=1e-9)
        ratios.append(s.provenance["actor_scale"])
    assert 0.8 <= min(ratios) < 0.82 and 1.18 < max(ratios) <= 1.2


def test_shift_identity():
    seqs = generate(SMALL)
    assert domain_shift(seqs, (1.0, 0.0)) == seqs


def test_shift_then_normalize_invariant():
    for s, t in zip(generate(SMALL), domain_shift(generate(SMALL), (2.0, math.pi / 2))):
        np.testing.assert_allclose(normalize(t).positions, normalize(s).positions, atol=1e-6)
    shifted = domain_shift(generate(SMALL), (2.0, math.pi / 2))[0]
    assert not np.allclose(shifted.positions, generate(SMALL)[0].positions)


def test_one_nn_separability():
    cfg = SynthConfig(samples_per_class=20, seed=1)
    seqs = generate(cfg)
    x = np.stack([sequence_window(normalize(s)).data.ravel() for s in seqs])
    y = np.array([s.label for s in seqs])
    train = np.arange(len(seqs)) % 2 == 0
    d = ((x[~train, None] - x[None, train]) ** 2).sum(-1)
    pred = y[train][d.argmin(1)]
    assert (pred == y[~train]).mean() >= 0.95


def test_write_dataset_tree(tmp_path):
    seqs = generate(SynthConfig(samples_per_class=2, classes=("kick", "throw")))
    paths = write_dataset(seqs, tmp_path, TABLE)
    assert sorted(p.relative_to(tmp_path).as_posix() for p in paths) == [
        "kick/0000.jsonl", "kick/0001.jsonl", "throw/0000.jsonl", "throw/0001.jsonl"]
    back = load_recordings(tmp_path, TABLE)
    assert [s.label for s in back] == [s.label for s in seqs]
    np.testing.assert_allclose(back[0].positions, seqs[0].positions)


@pytest.mark.parametrize("kw", [{"actor_scale_range": (1.2, 0.8)}, {"duration_seconds": 0},
                                {"classes": ("moonwalk",)}, {"samples_per_class": 0}])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        SynthConfig(**kw)
