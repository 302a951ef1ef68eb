import pytest

from slidedx.config import EngineConfig, load_config
from slidedx.errors import ConfigError


def test_defaults():
    cfg = load_config(env={})
    assert cfg.profile == "test"
    assert cfg.reward.format_penalty == 0.5
    assert cfg.timeout == 1.0  # test profile shortens the backend timeout


def test_file_values_and_relative_paths(workspace):
    cfg = load_config(workspace / "engine.ini", env={})
    assert cfg.corpus == workspace / "corpus"
    assert cfg.toolkits == workspace / "toolkits"
    assert cfg.seed == 7 and cfg.max_rounds == 3
    assert cfg.reward.alpha == 0.5


def test_env_overrides_file(workspace):
    cfg = load_config(workspace / "engine.ini",
                      env={"ENGINE_SEED": "99",
                           "ENGINE_REASONER_URL": "http://models.internal:9000"})
    assert cfg.seed == 99
    assert cfg.backend_urls == {"reasoner": "http://models.internal:9000"}


def test_flags_override_env(workspace):
    cfg = load_config(workspace / "engine.ini", env={"ENGINE_SEED": "99"},
                      overrides={"seed": 123})
    assert cfg.seed == 123


def test_none_overrides_ignored(workspace):
    cfg = load_config(workspace / "engine.ini", env={}, overrides={"seed": None})
    assert cfg.seed == 7


def test_missing_paths_rejected(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        EngineConfig(corpus=tmp_path / "nope")


def test_unknown_profile_rejected():
    with pytest.raises(ConfigError):
        EngineConfig(profile="prod")


def test_live_backends_all_roles(tmp_path):
    cfg = EngineConfig(backend_urls={"all": "http://models:1"}, profile="live")
    backends = cfg.live_backends()
    assert set(backends) == {"interpreter", "reasoner", "judge", "exam_oracle"}
    assert backends["reasoner"].endpoint.timeout == 120.0


def test_missing_config_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/engine.ini", env={})


def test_pemr_pattern_section(tmp_path):
    ini = tmp_path / "engine.ini"
    ini.write_text("[pemr]\nnuclear = nuclear grad; fuhrman\ngleason = gleason\n")
    cfg = load_config(ini, env={})
    assert cfg.pemr_patterns == {"nuclear": ["nuclear grad", "fuhrman"],
                                 "gleason": ["gleason"]}
