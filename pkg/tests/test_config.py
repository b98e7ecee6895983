import pytest

from drstack.config import (
    PipelineConfig,
    config_to_text,
    load_pipeline_config,
    parse_config_text,
    smoke_config,
)
from drstack.errors import ConfigError


def test_full_scale_training_defaults():
    cfg = PipelineConfig()
    base = cfg.train_base
    assert base.loss == "binary-cross-entropy"
    assert base.optimizer == "adam"
    assert base.learning_rate == 5e-5
    assert base.batch_size == 32
    assert base.l2_on_dense == 1e-3
    assert base.dropout == 0.5
    assert base.epochs == 15
    meta = cfg.train_meta
    assert meta.epochs == 200
    assert meta.batch_size == 64
    assert cfg.resample_target == 700
    assert cfg.preprocess.target_size == 224
    assert cfg.augment.zoom_range == 0.15
    assert cfg.augment.horizontal_flip and cfg.augment.vertical_flip
    assert cfg.head.dense_width == 256
    assert cfg.meta.widths == (64, 64, 32, 32, 16, 8, 4)


def test_parse_config_text():
    values = parse_config_text(
        """
        # comment
        seed = 7

        train_base.epochs = 3
        backbones = tiny-cnn , tiny-cnn
        """
    )
    assert values == {
        "seed": "7",
        "train_base.epochs": "3",
        "backbones": "tiny-cnn , tiny-cnn",
    }


def test_parse_rejects_garbage_line():
    with pytest.raises(ConfigError):
        parse_config_text("this is not a key value pair")


def test_load_with_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "seed = 3\n"
        "resample_target = 500\n"
        "train_base.epochs = 9\n"
        "preprocess.target_size = 64\n"
        "preprocess.sigma_x = 1.0\n"
    )
    cfg = load_pipeline_config(path, {"train_base.epochs": "4", "seed": "11"})
    assert cfg.seed == 11
    assert cfg.resample_target == 500  # the alternate balancing target is reachable
    assert cfg.train_base.epochs == 4
    assert cfg.preprocess.target_size == 64


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        load_pipeline_config(None, {"train_base.momentum": "0.9"})


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        load_pipeline_config(None, {"seed": "not-a-number"})


def test_backbones_must_be_two():
    with pytest.raises(ConfigError):
        load_pipeline_config(None, {"backbones": "tiny-cnn"})


def test_config_round_trip(tmp_path):
    cfg = smoke_config(tmp_path / "out", seed=13)
    text = config_to_text(cfg)
    path = tmp_path / "round.cfg"
    path.write_text(text)
    reloaded = load_pipeline_config(path)
    assert reloaded == cfg


def test_smoke_config_is_desk_scale(tmp_path):
    cfg = smoke_config(tmp_path, seed=1)
    assert cfg.backbone_names == ("tiny-cnn", "tiny-cnn")
    assert cfg.preprocess.target_size == 64
    assert cfg.train_base.epochs <= 10
    specs = cfg.backbone_specs()
    assert specs[0].input_size == 64
    assert specs[0].frozen_fraction == 0.0  # not pretrained, trains end to end


def test_dropout_key_flows_into_heads():
    cfg = load_pipeline_config(None, {"train_base.dropout": "0.25"})
    assert cfg.train_base.dropout == 0.25
    assert cfg.head.dropout_rate == 0.25
    cfg2 = load_pipeline_config(
        None, {"train_base.dropout": "0.25", "head.dropout_rate": "0.4"}
    )
    assert cfg2.head.dropout_rate == 0.4
