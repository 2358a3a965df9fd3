import json

import pytest

from dht.config import DEFAULTS, THREADS_ENV, ConfigError, RunConfig, load_config


def test_defaults():
    cfg = RunConfig.from_flat({})
    assert cfg == RunConfig()
    assert cfg.to_flat() == DEFAULTS
    assert cfg.kernel.kind == "gaussian" and cfg.ic.criterion == "AICC" and cfg.encoder.d == 8


def test_flat_roundtrip():
    flat = dict(DEFAULTS, **{"kernel.kind": "cosine", "encoder.d": 16, "ic.criterion": "GN", "ic.gn_shape": 0.5})
    cfg = RunConfig.from_flat(flat)
    assert RunConfig.from_flat(cfg.to_flat()) == cfg
    assert cfg.ic.gn_shape == 0.5


@pytest.mark.parametrize(
    "bad",
    [
        {"kernel.kinds": "gaussian"},
        {"encoder.d": 2.5},
        {"encoder.d": True},
        {"ic.on_raw_pixels": 1},
        {"kernel.sigma": "1"},
        {"kernel.kind": "laplace"},
        {"ic.criterion": "MDL"},
        {"tokens.q": 0},
        {"train.epochs": -1},
        {"train.lr": -1e-3},
        {"train.lr": float("nan")},
        {"vectorize.tol": -0.1},
        {"threads": 0},
        {"seed": None},
    ],
)
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_flat(bad)


def test_zero_learning_rate_allowed():
    assert RunConfig.from_flat({"train.lr": 0}).train.lr == 0.0


def test_int_promoted_to_float():
    cfg = RunConfig.from_flat({"kernel.sigma": 2})
    assert isinstance(cfg.kernel.sigma, float)


def test_override():
    cfg = RunConfig().override(**{"encoder.d": 4}, tokens__q=8, seed=None)
    assert cfg.encoder.d == 4 and cfg.q == 8 and cfg.seed == 0
    assert cfg.encoder.seed == 0  # encoder seed follows the run seed
    assert RunConfig().override(seed=7).encoder.seed == 7


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"ic.criterion": "BIC", "train.epochs": 3}))
    cfg = load_config(p)
    assert cfg.ic.criterion == "BIC" and cfg.train.epochs == 3
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.json")


def test_thread_cap(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert RunConfig().resolved_threads() == 1
    assert RunConfig.from_flat({"threads": 6}).resolved_threads() == 6
    monkeypatch.setenv(THREADS_ENV, "4")
    assert RunConfig().resolved_threads() == 4
    assert RunConfig.from_flat({"threads": 6}).resolved_threads() == 4
    assert RunConfig.from_flat({"threads": 2}).resolved_threads() == 2
    for bad in ("x", "0"):
        monkeypatch.setenv(THREADS_ENV, bad)
        with pytest.raises(ConfigError):
            RunConfig().resolved_threads()
