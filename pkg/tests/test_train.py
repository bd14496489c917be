import json

import numpy as np
import pytest

from qdisco.circuit import FunctorConfig
from qdisco.story import generate_tier
from qdisco.train import (Adam, Checkpoint, TrainConfig, TrainingError, accuracy,
                          init_params, parameter_count, select_checkpoint, train)


def tiny_data(seed=0):
    ss = generate_tier("two", "simple", (2, 3), 24, rng_seed=seed)
    return {"train": ss[:16], "valid-a": ss[16:]}


def test_config_validation_and_round_trip():
    cfg = TrainConfig("four", 0.02840955, 256, 10, 1151618203,
                      functor=FunctorConfig(follows_order="subject-first"))
    again = TrainConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg and again.seed == 1151618203
    for bad in ({"learning_rate": 0}, {"batch_size": 0}, {"epochs": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_zero_epochs_returns_initial_params():
    init = init_params(3)
    res = train(tiny_data(), TrainConfig(epochs=0), init=init)
    assert res.history == [] and res.best is None
    assert np.array_equal(res.params.values, init.values)


def test_init_is_seeded_uniform():
    a, b = init_params(5), init_params(5)
    assert np.array_equal(a.values, b.values)
    assert a.values.min() >= 0 and a.values.max() < 2 * np.pi
    assert a.values.size == parameter_count("two")


def test_adam_matches_hand_computation():
    opt = Adam(2, 0.1)
    x = opt.step(np.array([1.0, -1.0]), np.array([0.5, -2.0]))
    # first step moves each coordinate by lr * sign(grad)
    assert np.allclose(x, [0.9, -0.9], atol=1e-6)


def ck(epoch, valid, loss, train_acc=None):
    return Checkpoint(epoch, None, loss, valid, train_acc)


def test_selection_rule():
    assert select_checkpoint([]) is None
    h = [ck(1, 0.9, 0.5, 0.8), ck(2, 0.95, 0.6), ck(3, 0.95, 0.4), ck(4, 0.95, 0.3, 0.9)]
    # epochs 2-4 tie on ValidA; epoch 4 has the best train accuracy
    assert select_checkpoint(h) == 3
    h = [ck(1, 0.95, 0.5, 0.9), ck(2, 0.95, 0.4), ck(3, 0.9, 0.1)]
    # epoch 2 borrows epoch 1's train accuracy and wins on loss
    assert select_checkpoint(h) == 1
    h = [ck(1, 0.95, 0.5), ck(2, 0.95, 0.5)]
    assert select_checkpoint(h) == 0


def test_training_is_deterministic_and_logs(tmp_path):
    cfg = TrainConfig(epochs=4, seed=2, learning_rate=0.05, batch_size=4)
    a = train(tiny_data(), cfg, checkpoint_dir=tmp_path)
    b = train(tiny_data(), cfg)
    assert np.array_equal(a.params.values, b.params.values)
    assert [c.loss for c in a.history] == [c.loss for c in b.history]
    assert [c.train_accuracy is not None for c in a.history] == [True, False, False, True]
    assert a.history[-1].loss < a.history[0].loss
    assert len(list(tmp_path.glob("epoch-*.json"))) == 4
    a.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,validA_acc,train_acc" and len(lines) == 5


def test_early_stop():
    cfg = TrainConfig(epochs=5, seed=0, stop_valid_accuracy=0.0)
    assert len(train(tiny_data(), cfg).history) == 1


def test_non_finite_parameters_raise(tmp_path):
    init = init_params(0)
    init.values[:] = np.nan
    with pytest.raises(TrainingError):
        train(tiny_data(), TrainConfig(epochs=1), init=init, checkpoint_dir=tmp_path)
    assert (tmp_path / "diagnostic.json").exists()


def test_accuracy_report_and_skips():
    ss = generate_tier("two", "simple", (2, 3), 12) + generate_tier("two", "dense", (12, 12), 2)
    rep = accuracy(init_params(1), ss, max_rows=6)
    assert {r["width"] for r in rep.rows} == {2, 3, 12}
    assert len(rep.records) + len(rep.skipped) == len(ss)
    assert all(r["width"] == 12 for r in rep.skipped) and rep.skipped
    row12 = next(r for r in rep.rows if r["width"] == 12)
    assert row12["n"] == 0 and row12["note"] == "empty"
    lo, hi = rep.interval
    assert lo <= rep.overall <= hi
