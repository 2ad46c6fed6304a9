import pytest
from qtopc import _config
from qtopc._base import ConfigError


def test_defaults():
    config = _config.ExperimentConfig()
    assert config.preset == "two-level"
    assert config.lambda0 == 0.04
    assert config.runs == 1000
    assert set(config.sections()) == {"system", "controller", "campaign"}
    assert config.sections()["controller"]["ts"] == 1.0
    assert config.sections()["campaign"]["mode"] == "monte-carlo"


def test_validation():
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(mode="forever")
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(preset="custom")
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(runs=0)
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(ts=0.0)
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(gamma=-0.1)
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(gamma_min=0.3, gamma_max=0.2)
    with pytest.raises(ConfigError):
        _config.ExperimentConfig(true_channel="sigma_w")

    assert _config.ExperimentConfig().replace(runs=5).runs == 5


def test_apply_overrides():
    config = _config.ExperimentConfig()
    changed = _config.apply_overrides(config, {"runs": "12", "lambda0": "0.5", "preset": "three-level", "seed": None})
    assert changed.runs == 12
    assert changed.lambda0 == 0.5
    assert changed.preset == "three-level"
    assert changed.seed == config.seed

    assert _config.apply_overrides(config, {"gamma": "none"}).gamma is None
    assert _config.apply_overrides(config, {"gamma": "0.2"}).gamma == 0.2
    assert _config.apply_overrides(config, {}) is config

    with pytest.raises(ConfigError):
        _config.apply_overrides(config, {"runs": "many"})
    with pytest.raises(ConfigError):
        _config.apply_overrides(config, {"colour": "blue"})
    with pytest.raises(ConfigError):
        _config.apply_overrides(config, {"mode": "forever"})


def test_load_config(tmp_path):
    path = tmp_path / "qtopc.ini"
    path.write_text("[system]\npreset = three-level\ngamma = 0.02\n\n[campaign]\nruns = 20\nout = results/%(x)s\n")
    config = _config.load_config(path)
    assert config.preset == "three-level"
    assert config.gamma == 0.02
    assert config.runs == 20
    assert config.out == "results/%(x)s"

    base = _config.ExperimentConfig(seed=9)
    assert _config.load_config(path, base).seed == 9


@pytest.mark.parametrize("text", [
    "[system]\nruns = 20\n",
    "[nonsense]\nruns = 20\n",
    "[campaign]\nruns = twenty\n",
    "runs = 20\n",
])
def test_load_config_errors(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        _config.load_config(path)


def test_load_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        _config.load_config(tmp_path / "missing.ini")
