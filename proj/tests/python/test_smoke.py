# Copyright 2026 The mlsgm Authors
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

import mlsgm


def test_tensor_round_trip(tmp_path):
    a = np.arange(6, dtype=np.float64).reshape(2, 3) / 7.0
    blob = mlsgm.encode_tensor(a)
    assert blob[:4] == b"MLSG"
    assert len(blob) == 4 + 4 + 4 + 2 * 8 + 6 * 4
    np.testing.assert_array_equal(mlsgm.decode_tensor(blob), a.astype(np.float32))
    mlsgm.save_tensor(a, tmp_path / "a.mlsg")
    np.testing.assert_array_equal(mlsgm.load_tensor(tmp_path / "a.mlsg"), a.astype(np.float32))


def test_bad_tensor_bytes():
    with pytest.raises(mlsgm.DataError):
        mlsgm.decode_tensor(b"")


def test_losses():
    assert mlsgm.weighted_bce([0.5], [1], [0.3]) == pytest.approx(math.log(2))
    assert mlsgm.partial_bce([0.7, 0.1, 0.5, 0.9], [1, 0, 0, 0]) == pytest.approx(
        -(-4.45 * 0.25 + 5.45) / 4 * math.log(0.7))
    assert mlsgm.asymmetric_focal([0.6], [0]) == pytest.approx(-(0.55**4) * math.log(0.45))
    assert mlsgm.max_pool(np.array([[0.2], [0.9], [0.5]])) == [0.9]


def test_metrics():
    assert mlsgm.average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(5 / 6)
    rep = mlsgm.evaluate(np.array([[0.9, 0.8, 0.2, 0.1]]), np.array([[1, -1, 1, -1]]))
    assert set(rep) == {"mAP", "CP", "CR", "CF1", "OP", "OR", "OF1", "top3", "per_class_ap"}
    assert rep["OP"] == 0.5 and rep["OR"] == 0.5


def test_localize():
    m = np.zeros((4, 4))
    m[1, 2] = 0.7
    assert mlsgm.localize(m) == (0.5, 0.25, 0.25, 0.25)


def test_synth_and_drop_labels():
    d = mlsgm.synth_dataset(n=8, classes=3, seed=2)
    assert len(d["features"]) == 8
    assert d["features"][0].shape == (8, 8, 8)
    pos = (d["labels"] == 1).sum(axis=1)
    assert pos.min() >= 1 and pos.max() <= 3
    dropped = mlsgm.drop_labels(d["labels"], 0.5, 3)
    assert ((dropped == 0) | (dropped == d["labels"])).all()
    np.testing.assert_array_equal(dropped, mlsgm.drop_labels(d["labels"], 0.5, 3))


def test_run_exit_codes(tmp_path):
    synth = {"n": 4, "classes": 2, "channels": 3, "height": 3, "width": 3}
    assert mlsgm.run({"mode": "partial", "synth": synth, "out": str(tmp_path / "p")}) == 2
    assert mlsgm.run({"mode": "eval", "synth": synth, "checkpoint": str(tmp_path / "none"),
                      "out": str(tmp_path / "e")}) == 3
    cfg = {"mode": "train", "seed": 1, "epochs": 1, "widths": [4, 4], "out": str(tmp_path / "t"), "synth": synth}
    assert mlsgm.run(cfg) == 0
    assert (tmp_path / "t" / "report.json").exists()
    with pytest.raises(mlsgm.ConfigError):
        mlsgm.run({"no_such_key": 1})
