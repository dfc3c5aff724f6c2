import csv

import numpy as np
import pytest

from scatterkit.dataset import Dataset
from scatterkit.net import (SGD, BackboneConfig, Model, TrainConfig, TrainingDiverged, accuracy,
                            load_checkpoint, predict, predict_arrays, save_checkpoint, standardize,
                            train)
from scatterkit.serialize import FormatError
from scatterkit.tensor import Tensor

SMALL = BackboneConfig(channels=(16, 32), input_size=16, n_classes=3)


def toy(n=6, seed=0, n_classes=3):
    rng = np.random.default_rng(seed)
    chips = rng.uniform(size=(n, 16, 16)).astype(np.float32)
    labels = np.arange(n) % n_classes
    for i, y in enumerate(labels):
        chips[i, 4 * y:4 * y + 4, 4:8] += 3.0      # class-specific bright patch
    comps = rng.uniform(size=(n, 4, 16, 16)).astype(np.float32)
    return Dataset(chips, comps, labels.astype(np.int64), np.zeros(n), [f"s{i}" for i in range(n)])


def test_backbone_validation():
    with pytest.raises(ValueError):
        BackboneConfig(channels=(16, 32), input_size=18)
    with pytest.raises(ValueError):
        BackboneConfig(channels=(8, 16), input_size=16)       # SE bottleneck at 8 channels
    with pytest.raises(ValueError):
        BackboneConfig(channels=(16,), input_size=16, piha_after_stage=(1,))
    assert SMALL.baseline().piha_stages == ()
    assert SMALL.piha_stages == (0, 1)
    assert BackboneConfig.from_config(SMALL.to_config()) == SMALL


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=5, early_stop_patience=10)
    with pytest.raises(ValueError):
        TrainConfig(precision="half")
    cfg = TrainConfig.from_config({"lr": "0.1", "batch_size": "8", "stop_at_perfect": "no"})
    assert (cfg.lr, cfg.batch_size, cfg.stop_at_perfect) == (0.1, 8, False)
    assert cfg.momentum == 0.9 and TrainConfig().dtype == np.float32


def test_standardize():
    x = np.random.default_rng(0).normal(3, 2, size=(3, 1, 4, 4))
    z = standardize(x)
    np.testing.assert_allclose(z.mean(axis=(1, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=(1, 2, 3)), 1, rtol=1e-12)
    np.testing.assert_array_equal(standardize(np.full((1, 2, 2), 5.0)), np.zeros((1, 2, 2)))


def test_scores_are_distributions_and_zero_head_is_uniform():
    model = Model.init(SMALL, seed=1)
    ds = toy()
    p = predict(model, ds)
    assert p.shape == (6, 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-6)
    model.params["head.w"].data[...] = 0
    np.testing.assert_allclose(predict(model, ds), 1 / 3, rtol=1e-6)


def test_forward_requires_maps_and_shape():
    model = Model.init(SMALL)
    with pytest.raises(ValueError):
        predict_arrays(model, np.zeros((1, 16, 16)), None)
    with pytest.raises(ValueError):
        predict_arrays(model, np.zeros((1, 32, 32)), np.zeros((1, 4, 32, 32)))
    base = Model.init(SMALL.baseline())
    assert predict_arrays(base, np.zeros((2, 16, 16)), None).shape == (2, 3)


def test_zero_lr_keeps_weights():
    model = Model.init(SMALL, seed=2)
    before = model.state_dict()
    cfg = TrainConfig(lr=0.0, max_epochs=2, early_stop_patience=2, stop_at_perfect=False)
    train(model, toy(), toy(seed=1), cfg)
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_sgd_step_rule():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = SGD({"p": p}, lr=0.1, momentum=0.5, weight_decay=0.01)
    p.grad = np.array([0.5, 0.5])
    opt.step()
    v1 = np.array([0.5, 0.5]) + 0.01 * np.array([1.0, -2.0])
    np.testing.assert_allclose(p.data, [1.0, -2.0] - 0.1 * v1)
    prev = p.data.copy()
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_allclose(p.data, prev - 0.1 * (0.5 * v1 + 0.01 * prev))


def test_memorizes_tiny_set_and_history(tmp_path):
    ds = toy(n=6)
    model = Model.init(SMALL, seed=0, dtype=np.float64)
    cfg = TrainConfig(lr=0.05, batch_size=6, max_epochs=60, early_stop_patience=60, precision="double")
    res = train(model, ds, ds, cfg)
    assert res.best_val_acc == 100.0 and res.reason == "perfect_validation"
    assert accuracy(predict(model, ds), ds.labels) == 100.0
    res.write_history(tmp_path / "h.csv")
    with open(tmp_path / "h.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "val_acc"] and len(rows) == len(res.history) + 1


def test_training_is_deterministic():
    cfg = TrainConfig(max_epochs=2, early_stop_patience=2, stop_at_perfect=False)
    states = []
    for _ in range(2):
        m = Model.init(SMALL, seed=4)
        train(m, toy(), toy(seed=1), cfg)
        states.append(m.state_dict())
    for k in states[0]:
        assert np.array_equal(states[0][k], states[1][k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported():
    model = Model.init(SMALL, seed=0)
    cfg = TrainConfig(lr=1e30, max_epochs=3, early_stop_patience=3, stop_at_perfect=False)
    with pytest.raises(TrainingDiverged):
        train(model, toy(), toy(), cfg)


def test_label_range_checked():
    bad = toy(n_classes=3)
    bad.labels[0] = 5
    with pytest.raises(ValueError):
        train(Model.init(SMALL), bad, toy(), TrainConfig(max_epochs=1, early_stop_patience=1))


def test_accuracy_empty():
    assert accuracy(np.zeros((0, 3)), np.zeros(0, dtype=int)) == 0.0


def test_checkpoint_roundtrip_and_tamper(tmp_path):
    model = Model.init(SMALL, seed=3)
    save_checkpoint(model, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert back.cfg == SMALL and back.dtype == np.float32
    for k, v in model.state_dict().items():
        assert np.array_equal(back.params[k].data, v)
    ds = toy()
    np.testing.assert_array_equal(predict(model, ds), predict(back, ds))
    f = tmp_path / "ck" / "head_w.skb"
    blob = bytearray(f.read_bytes())
    blob[-1] ^= 1
    f.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ck")


def test_load_state_checks():
    model = Model.init(SMALL)
    state = model.state_dict()
    state.pop("head.b")
    with pytest.raises(ValueError):
        model.load_state(state)
    state = model.state_dict()
    state["head.b"] = np.zeros(4)
    with pytest.raises(ValueError):
        model.load_state(state)
