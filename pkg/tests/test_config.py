import pytest

from irregad.config import PRESETS, ConfigError, RunConfig, config_hash, load_config, resolve_hyperparameters


def test_digits_mlstm_preset():
    hp = resolve_hyperparameters("digits-mlstm")
    assert (hp.variant, hp.B, hp.p, hp.alpha, hp.lam, hp.tau) == ("M-LSTM", 32, 8, 1000.0, 0.4, 10)
    assert hp.nominal_period == 0.1


def test_activity_presets():
    d = resolve_hyperparameters("activity-dlstm")
    assert (d.variant, d.p, d.alpha, d.gamma, d.lam) == ("D-LSTM", 16, 10000.0, 0.1, 0.3)
    m = resolve_hyperparameters("activity-mlstm")
    assert (m.p, m.alpha, m.lam, m.tau) == (32, 1000.0, 0.4, 10)
    assert resolve_hyperparameters("activity-alstm").p == 16


def test_all_presets_validate():
    assert len(PRESETS) == 6
    for name in PRESETS:
        resolve_hyperparameters(name)


def test_resolution_order():
    hp = resolve_hyperparameters("digits-alstm", {"p": 4, "lr": 0.01}, seed=7, overrides={"lr": 0.02})
    assert (hp.variant, hp.p, hp.lr, hp.seed) == ("A-LSTM", 4, 0.02, 7)


def test_unknown_keys_rejected():
    for bad in ({"colour": 1}, {"data": {"trian": "x"}}, {"preprocess": {"drop": [0.1]}},
                {"online": {"samples": 3}}, {"hyperparameters": {"learning_rate": 1}},
                {"preprocess": {"relabel": {"nominal": [1], "other": [2]}}}, {"synth": {"size": 1}}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)


def test_field_validation():
    for bad in ({"seed": -1}, {"seed": True}, {"preset": "nope"},
                {"preprocess": {"drop_rates": [1.0]}}, {"preprocess": {"split": [0.5, 0.5]}},
                {"preprocess": {"subsample": {"len_min": 9, "len_max": 3}}},
                {"preprocess": {"first_difference": "yes"}}, {"data": {"format": "csv"}},
                {"online": {"n_samples": 0}}, {"online": {"candidates": [{"p": 0}]}},
                {"hyperparameters": {"p": 0}}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)


def test_load_yaml_and_hash(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 3\npreset: digits-dlstm\nhyperparameters: {n_epoch: 2}\n"
                    "preprocess: {drop_rates: [0.1, 0.7], first_difference: true}\n")
    cfg = load_config(path)
    assert cfg.seed == 3 and cfg.preprocess.drop_rates == [0.1, 0.7]
    assert cfg.resolve().n_epoch == 2 and cfg.resolve().variant == "D-LSTM"
    assert config_hash(cfg) == config_hash(load_config(path))
    assert config_hash(cfg) != config_hash(cfg.replace(seed=4))
    assert load_config(None) == RunConfig.from_dict({})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_candidates():
    cfg = RunConfig.from_dict({"hyperparameters": {"p": 3}, "online": {"candidates": [{"lr": 0.1}, {"p": 5}]}})
    a, b = cfg.candidates()
    assert (a.p, a.lr) == (3, 0.1) and b.p == 5
    assert RunConfig.from_dict({}).candidates() == [RunConfig.from_dict({}).resolve()]


def test_empty_recipe():
    assert RunConfig.from_dict({}).preprocess.is_empty
    assert not RunConfig.from_dict({"preprocess": {"normalize": True}}).preprocess.is_empty
