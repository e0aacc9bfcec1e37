import json

import pytest

from dynlate.config import CliConfig
from dynlate.errors import ConfigError


def write(tmp_path, obj):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(obj))
    return path


def test_defaults():
    cfg = CliConfig()
    ecfg = cfg.estimate_config()
    assert (ecfg.folds, ecfg.learner.clip, ecfg.level) == (5, (0.01, 1.0), 0.95)


def test_unknown_top_level_key(tmp_path):
    with pytest.raises(ConfigError, match="cfg.json: extra: unknown key"):
        CliConfig.load(write(tmp_path, {"extra": 1}))


def test_unknown_nested_key(tmp_path):
    with pytest.raises(ConfigError, match=r"mc\.reps"):
        CliConfig.load(write(tmp_path, {"mc": {"reps": 3}}))


def test_bad_estimand_names_path(tmp_path):
    cfg = CliConfig.load(write(tmp_path, {"mc": {"estimands": ["when_to_treat(1)", "nope"]}}))
    with pytest.raises(ConfigError, match=r"mc\.estimands\[1\]"):
        cfg.experiment()


def test_schema_version(tmp_path):
    with pytest.raises(ConfigError, match="schema_version"):
        CliConfig.load(write(tmp_path, {"schema_version": 2}))


def test_learner_section_applies(tmp_path):
    cfg = CliConfig.load(write(tmp_path, {"learner": {"regressor": "saturated", "clip": [0.05, 1.0]}, "mc": {"n": 100}}))
    assert cfg.estimate_config().learner.clip == (0.05, 1.0)
    exp = cfg.experiment()
    assert exp.learner.regressor == "saturated" and exp.n == 100


def test_bad_learner_value(tmp_path):
    with pytest.raises(ConfigError, match="learner"):
        CliConfig.load(write(tmp_path, {"learner": {"clip": [0.5, 0.1]}}))


def test_invalid_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        CliConfig.load(path)


def test_sample_size_guard():
    with pytest.raises(ConfigError, match="n must be ≥ 1"):
        CliConfig().scm({"n": 0})


def test_readme_example_config_parses():
    from pathlib import Path

    text = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    block = text.split("```json", 1)[1].split("```", 1)[0]
    cfg = CliConfig.from_dict(json.loads(block), "README")
    assert cfg.experiment().workers == 4
    assert [s.label for s in cfg.estimands(2)] == ["when_to_treat(10)", "always_treat_staggered"]
