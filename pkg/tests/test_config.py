"""Tests for configuration loading and error exit codes."""

import pytest

from glat.config import Settings, load_settings, parse_config_file
from glat.exceptions import (
    ConfigError,
    DimensionMismatchError,
    DivergenceError,
    EmbeddingFormatError,
    MissingInputError,
)


@pytest.fixture
def config_file(tmp_path):
    """Write a config file and return its path."""

    def _write(text: str):
        path = tmp_path / "glat.conf"
        path.write_text(text, encoding="utf-8")
        return path

    return _write


def test_defaults():
    settings = Settings()
    assert (settings.m, settings.t, settings.lr, settings.batch_size) == (32, 4, 1e-4, 16)
    assert settings.sigma == "median"
    assert settings.train_config().weight_decay == 1e-5


def test_parse_with_comments(config_file):
    path = config_file("# selection\nm = 8   # patches\n\nt=2\n")
    assert parse_config_file(path) == {"m": "8", "t": "2"}


def test_load_settings_values(config_file):
    path = config_file("m = 8\nlambda = 0.25\nsigma = 1.5\nclass_mixture = 0.4, 0.2, 0.2, 0.2\nattention = msa\n")
    settings = load_settings(path)

    assert settings.m == 8
    assert settings.lambda_ == 0.25
    assert settings.sigma == 1.5
    assert settings.class_mixture == (0.4, 0.2, 0.2, 0.2)
    assert settings.attention == "msa"
    assert settings.synth_spec().class_mixture == (0.4, 0.2, 0.2, 0.2)


def test_overrides_win(config_file):
    settings = load_settings(config_file("seed = 1\n"), seed=9, m=None)
    assert settings.seed == 9
    assert settings.m == 32


def test_environment_prefix(monkeypatch):
    monkeypatch.setenv("GLAT_PATIENCE", "3")
    assert load_settings().patience == 3


@pytest.mark.parametrize(
    "text, message",
    [
        ("m 8\n", "line 1"),
        ("m = 8\nm = 9\n", "Duplicate key 'm' at line 2"),
        ("unknown_key = 1\n", "Invalid configuration"),
        ("m = 0\n", "Invalid configuration"),
        ("filter_order = 5\n", "Invalid configuration"),
        ("score_mode = rows\n", "Invalid configuration"),
        ("scorer = attention\n", "Invalid configuration"),
    ],
)
def test_invalid_config(config_file, text, message):
    with pytest.raises(ConfigError, match=message):
        load_settings(config_file(text))


def test_missing_config(tmp_path):
    with pytest.raises(MissingInputError):
        load_settings(tmp_path / "absent.conf")


def test_exit_codes_are_distinct():
    codes = [
        ConfigError.exit_code,
        MissingInputError.exit_code,
        DimensionMismatchError.exit_code,
        EmbeddingFormatError.exit_code,
        DivergenceError.exit_code,
    ]
    assert len(set(codes)) == len(codes)
    assert 0 not in codes and 2 not in codes
