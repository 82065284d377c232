import pytest

from tracer.config import (grid_from_kv, parse_kv, read_run_config, read_scenario, run_config_from_kv,
                           scenario_from_kv)
from tracer.errors import ConfigError, ScenarioSpecError
from tracer.risk import TracerParams


def test_parse_kv():
    text = "# comment\nalpha = 2  # inline\n\nwindow_unit=steps\n"
    assert parse_kv(text) == {"alpha": "2", "window_unit": "steps"}


def test_parse_kv_errors():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_kv("a=1\na=2")
    with pytest.raises(ConfigError, match=":1:"):
        parse_kv("just words")


def test_scenario_coercion():
    spec = scenario_from_kv({"n_episodes": "12", "hazard_kinds": "loop, tool_mismatch", "density": "0.2",
                             "with_logprobs": "false"})
    assert spec.n_episodes == 12 and spec.hazard_kinds == ("loop", "tool_mismatch")
    assert spec.density == 0.2 and spec.with_logprobs is False


def test_scenario_errors(tmp_path):
    with pytest.raises(ScenarioSpecError):
        scenario_from_kv({"colour": "red"})
    with pytest.raises(ScenarioSpecError):
        scenario_from_kv({"density": "0.1", "hazard_kinds": "none"})
    with pytest.raises(ScenarioSpecError):
        read_scenario(tmp_path / "missing.cfg")


def test_grid_lists():
    grid = grid_from_kv({"alpha": "0, 1, 3", "k": "0.2,1", "levels": "1", "tau": "0.5"})
    assert grid.alpha == (0.0, 1.0, 3.0) and grid.k == (0.2, 1.0) and grid.levels == 1 and grid.tau == 0.5


def test_run_config(tmp_path):
    stop = tmp_path / "stop.txt"
    stop.write_text("# mine\nfoo\nbar\n")
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(f"pi0 = 0.8\nwindow = 3\nprovider = builtin_hashed_bow\ndimension = 64\n"
                        f"stopwords_file = {stop}\nbeta = 2\nfreeze_k = yes\n")
    cfg = read_run_config(cfg_file)
    assert cfg.signals.content.pi0 == 0.8 and cfg.signals.content.stopwords == frozenset({"foo", "bar"})
    assert cfg.signals.repetition.window == 3
    assert cfg.embedding.dimension == 64
    assert cfg.params == TracerParams(beta=2.0)
    assert cfg.freeze_k is True


def test_run_config_errors():
    with pytest.raises(ConfigError):
        run_config_from_kv({"pi0": "high"})
    with pytest.raises(ConfigError):
        run_config_from_kv({"unknown_key": "1"})
    with pytest.raises(ConfigError):
        run_config_from_kv({"freeze_k": "maybe"})
    with pytest.raises(ConfigError):
        run_config_from_kv({"stopwords_file": "/nonexistent/stop.txt"})
