import math

import numpy as np
import pytest

import s4al

TINY = """
[experiment]
name = tiny
seed = 1

[synthetic]
height = 16
width = 16
train = 8
val = 2
test = 2
max_shapes_per_class = 2

[cycle]
num_cycles = 1
per_image_k = 2
region_h = 4
region_w = 4
initial_fraction = 0.25
replay_capacity = 4

[train]
epochs = 1
final_cycle_epochs = 2
warmup_epochs = 1
batch_size = 2
iters_per_epoch = 2

[model]
widths = 4,8
"""


def test_config_hash_is_stable():
    canon = s4al.canonical_config(TINY)
    assert s4al.canonical_config(canon) == canon
    assert s4al.config_hash(TINY) == s4al.config_hash(canon)
    with pytest.raises(s4al.Error, match="invalid-argument"):
        s4al.config_hash("[train]\nbogus = 1\n")


def test_cross_entropy_and_weighting():
    logits = np.log(np.array([0.8, 0.2])).reshape(2, 1, 1)
    loss, grad = s4al.supervised_loss(logits, np.zeros((1, 1), np.uint8))
    assert loss == pytest.approx(-math.log(0.8), abs=1e-9)
    assert grad[:, 0, 0] == pytest.approx([0.8 - 1.0, 0.2], abs=1e-9)

    conf = np.full((1, 1), 0.9, np.float32)
    valid = np.ones((1, 1), np.uint8)
    w, _ = s4al.weighted_unsup_loss(logits, np.zeros((1, 1), np.uint8), conf, valid)
    assert w == pytest.approx(float(np.float32(0.9)) * -math.log(0.8), abs=1e-9)
    assert s4al.eta(conf, 0.97, valid) == 0.0


def test_scores_and_selection():
    probs = np.array([0.7, 0.2, 0.1], np.float32).reshape(3, 1, 1)
    ent = s4al.pixel_scores(probs, "entropy")[0, 0]
    assert ent == pytest.approx(-(0.7 * math.log(0.7) + 0.2 * math.log(0.2) + 0.1 * math.log(0.1)), abs=1e-5)
    assert s4al.pixel_scores(probs, "margin")[0, 0] == pytest.approx(0.5, abs=1e-6)

    scores = np.arange(16, dtype=np.float32).reshape(4, 4)
    known = np.zeros((4, 4), np.uint8)
    known[3, 3] = 1
    picked = s4al.select_regions(scores, known, 2, 2, 1)
    assert picked == [(1, 1)]


def test_iou_and_ema():
    per_class, miou = s4al.iou(np.array([[0, 0]], np.uint8), np.array([[0, 1]], np.uint8), 2)
    assert per_class == [0.5, 0.0]
    assert miou == 0.25

    teacher = np.ones(4, np.float32)
    s4al.ema_update(teacher, np.zeros(4, np.float32), 0.99)
    assert teacher == pytest.approx(0.99)


def test_pool_replay_and_mixing():
    labeled, unlabeled, frac = s4al.initial_split(367, 360, 480, 30, 30, 0.1)
    assert len(labeled) == 37 and len(unlabeled) == 330
    assert frac == pytest.approx(37 / 367)

    buf = s4al.ReplayBuffer(2)
    for i in (1, 2, 3):
        buf.push(i)
    assert buf.items() == [2, 3]
    assert set(buf.sample(50, seed=3)) <= {2, 3}

    assert s4al.select_mix_classes([0, 1, 2, 3], {0, 1}, {2, 3}) == [2, 3]


def test_synthetic_and_run(tmp_path):
    images, labels = s4al.synthetic_dataset(TINY, "train")
    assert len(images) == 8
    assert images[0].shape == (3, 16, 16)
    assert labels[0].shape == (16, 16)

    report = s4al.run_experiment(TINY, str(tmp_path / "run"), deterministic=True)
    assert report.complete
    cycles = report.summary()["cycles"]
    assert [c["cycle"] for c in cycles] == [0, 1]
    assert cycles[1]["labeled_fraction"] > cycles[0]["labeled_fraction"]
    assert 0.0 <= cycles[-1]["miou_teacher"] <= 1.0
    assert (tmp_path / "run" / "report" / "miou_vs_fraction.csv").exists()
