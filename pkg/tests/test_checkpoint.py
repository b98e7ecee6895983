import numpy as np
import pytest

from drstack.backbones import backbone_spec
from drstack.checkpoint import (
    load_checkpoint,
    read_meta,
    save_checkpoint,
    spec_fingerprint,
)
from drstack.errors import CheckpointMismatchError
from drstack.model import (
    BranchHeadSpec,
    MetaModelSpec,
    TrainingHistory,
    build_branch,
    build_meta,
)


def small_branch(seed=0, dense_width=16):
    spec = backbone_spec("tiny-cnn", input_size=32)
    return build_branch(spec, BranchHeadSpec(dense_width=dense_width), seed=seed)


def test_round_trip_restores_outputs(tmp_path):
    rng = np.random.default_rng(0)
    model = small_branch(seed=1)
    x = rng.random((2, 32, 32, 3))
    reference = model.predict(x)
    save_checkpoint(tmp_path, "branch1", model)

    fresh = small_branch(seed=99)  # different init, same architecture
    assert not np.allclose(fresh.predict(x), reference)
    load_checkpoint(tmp_path, "branch1", fresh)
    assert np.array_equal(fresh.predict(x), reference)


def test_fingerprint_guards_against_spec_drift(tmp_path):
    model = small_branch(seed=2, dense_width=16)
    save_checkpoint(tmp_path, "b", model)
    other = small_branch(seed=2, dense_width=24)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(tmp_path, "b", other)


def test_fingerprint_is_canonical():
    a = spec_fingerprint({"x": 1, "y": [1, 2]})
    b = spec_fingerprint({"y": [1, 2], "x": 1})
    assert a == b
    assert a != spec_fingerprint({"x": 2, "y": [1, 2]})


def test_sidecar_records_history(tmp_path):
    meta_model = build_meta(MetaModelSpec(), seed=3)
    history = TrainingHistory()
    history.append(0, 0.9, 0.3, 0.8, 0.4, 0.1)
    history.append(1, 0.7, 0.5, 0.6, 0.7, 0.8)
    history.best_epoch = 1
    save_checkpoint(tmp_path, "meta", meta_model, history)

    meta = read_meta(tmp_path / "meta.meta.txt")
    assert meta["epoch"] == "1"
    assert meta["epochs_trained"] == "2"
    assert float(meta["best_val_qwk"]) == 0.8

    lines = (tmp_path / "meta.history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc,val_qwk"
    assert len(lines) == 3
