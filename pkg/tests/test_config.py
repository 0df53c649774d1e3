import pytest

from wishvi.config import ExperimentConfig, build_experiment, load_config
from wishvi.errors import ConfigError
from wishvi.inference import TrainConfig
from wishvi.kernels import DEFAULT_KERNEL_CONFIG


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.variant == "n-wp"
    assert cfg.nu is None
    assert cfg.kernel == DEFAULT_KERNEL_CONFIG
    assert cfg.train == TrainConfig()
    assert cfg.val_fraction == 0.02


def test_as_dict_includes_train_block():
    d = ExperimentConfig().as_dict()
    assert d["variant"] == "n-wp"
    assert d["train"]["n_steps"] == 20000
    assert d["train"]["lr_decay_rate"] == 0.99
    assert d["train"]["patience"] is None


@pytest.mark.parametrize(
    "kwargs",
    [
        {"variant": "zp"},
        {"nu": 0},
        {"n_inducing": 0},
        {"n_splits": 0},
        {"horizon": -1},
        {"val_fraction": 1.0},
        {"val_split_index": 10},
        {"forecast_samples": 0},
        {"scale_init": 0.0},
        {"noise_init": -1.0},
        {"jobs": 0},
        {"kernel": {"kind": "unknown"}},
    ],
)
def test_validation_rejects_bad_settings(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_build_experiment_merges_overrides():
    cfg = build_experiment({"variant": "iwp", "seed": 3}, seed=9, jobs=2)
    assert cfg.variant == "iwp"
    assert cfg.seed == 9
    assert cfg.jobs == 2
    # None overrides mean "not given on the command line"
    cfg2 = build_experiment({"seed": 3}, seed=None)
    assert cfg2.seed == 3


def test_build_experiment_train_block():
    cfg = build_experiment({"train": {"n_steps": 5, "batch_size": 4}})
    assert cfg.train.n_steps == 5
    assert cfg.train.batch_size == 4
    assert cfg.train.learning_rate == TrainConfig().learning_rate
    passthrough = build_experiment({"train": TrainConfig(n_steps=2)})
    assert passthrough.train.n_steps == 2


def test_build_experiment_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        build_experiment({"varaint": "wp"})
    with pytest.raises(ConfigError, match="unknown train config keys"):
        build_experiment({"train": {"n_step": 5}})
    with pytest.raises(ConfigError, match="'train'"):
        build_experiment({"train": 5})


def test_load_config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("variant: f2-wp\nhorizon: 5\ntrain:\n  n_steps: 10\n")
    mapping = load_config(path)
    cfg = build_experiment(mapping)
    assert cfg.variant == "f2-wp"
    assert cfg.horizon == 5
    assert cfg.train.n_steps == 10


def test_load_config_edge_cases(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == {}
    listy = tmp_path / "list.yaml"
    listy.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(listy)
    broken = tmp_path / "broken.yaml"
    broken.write_text("a: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(broken)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
