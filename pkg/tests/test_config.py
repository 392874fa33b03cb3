import json
from unittest.mock import patch

import pytest

from config import CONFIG, MODEL_PARAMS, OUT_ENV, RunConfig, load_config, output_dir, parse_config
from errors import ConfigValidationError
from hamiltonian_models import MODEL_REGISTRY


def test_empty_document_gives_defaults():
    cfg = parse_config({})
    assert cfg == RunConfig()
    assert cfg.grid.scheme == "splitting"
    assert cfg.ldp.epsilons == tuple(CONFIG["EPS_LADDER"])


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigValidationError) as info:
        parse_config({"grid": {"T": 1.0, "stepsize": 0.1}})
    assert info.value.problems == ["grid.stepsize: unknown key"]


def test_negative_dt_names_the_key():
    with pytest.raises(ConfigValidationError) as info:
        parse_config({"grid": {"dt": -0.1}})
    assert "grid.dt: must be > 0" in str(info.value)


def test_every_problem_is_reported_together():
    raw = {"model": {"name": "toda"}, "noise": {"epsilon": -1}, "mc": {"n": 0}, "extra": 1}
    with pytest.raises(ConfigValidationError) as info:
        parse_config(raw)
    problems = info.value.problems
    assert len(problems) == 4
    assert any(p.startswith("model.name:") for p in problems)
    assert any(p.startswith("noise.epsilon:") for p in problems)
    assert any(p.startswith("mc.n:") for p in problems)
    assert "extra: unknown key" in problems


def test_cross_checks():
    with pytest.raises(ConfigValidationError) as info:
        parse_config({"grid": {"T": 0.1, "dt": 0.5}, "weights": {"shape": [2, 2], "rho": [1.0]}})
    assert len(info.value.problems) == 2
    with pytest.raises(ConfigValidationError):
        parse_config({"nls": {"tangential": [1, 2, 3], "actions": [0.5, 0.5]}})
    with pytest.raises(ConfigValidationError):
        parse_config({"kam": {"action_low": [0.5, 0.0], "action_high": [0.5, 1.0]}})


def test_booleans_are_not_numbers():
    with pytest.raises(ConfigValidationError):
        parse_config({"mc": {"seed": True}})
    with pytest.raises(ConfigValidationError):
        parse_config({"ldp": {"oracle": 1}})


def test_lists_become_tuples_and_round_trip():
    cfg = parse_config({"weights": {"shape": [3, 2]}, "noise": {"sigma_q": [1.0, 2.0]}})
    assert cfg.weights.shape == (3, 2)
    assert cfg.noise.sigma_q == (1.0, 2.0)
    assert parse_config(json.loads(json.dumps(cfg.as_dict()))) == cfg


def test_load_config_reports_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigValidationError) as info:
        load_config(str(tmp_path / "absent.json"))
    assert "not found" in str(info.value)
    broken = tmp_path / "broken.json"
    broken.write_text("{grid: }")
    with pytest.raises(ConfigValidationError):
        load_config(str(broken))
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"mc": {"seed": 3}}))
    assert load_config(str(good)).mc.seed == 3


def test_output_dir_precedence():
    with patch.dict("os.environ", {OUT_ENV: "/tmp/from-env"}):
        assert output_dir("flag") == "flag"
        assert output_dir() == "/tmp/from-env"
    with patch.dict("os.environ", {}, clear=True):
        assert output_dir() == CONFIG["OUT_DIR"]


def test_model_params_are_checked_against_the_model():
    with pytest.raises(ConfigValidationError) as info:
        parse_config({"model": {"name": "pendulum_lattice", "params": {"kapa": 9.0}}})
    assert len(info.value.problems) == 1
    assert info.value.problems[0].startswith("model.params.kapa: unknown parameter")

    with pytest.raises(ConfigValidationError) as info:
        parse_config({"model": {"name": "nls_modes", "params": {"foo": 1, "modes": 0}},
                      "mc": {"n": 0}})
    problems = info.value.problems
    assert any(p.startswith("model.params.foo:") for p in problems)
    assert "model.params.modes: must be an integer >= 1" in problems
    assert any(p.startswith("mc.n:") for p in problems)


def test_known_model_params_pass():
    cfg = parse_config({"model": {"name": "harmonic_lattice", "params": {"omega": [1.0, 2.0]}}})
    assert cfg.model.params == {"omega": [1.0, 2.0]}
    assert parse_config({"model": {"name": "nls_modes", "params": {"normal_form": True}}})


def test_every_registered_model_declares_its_params():
    assert set(MODEL_PARAMS) == set(MODEL_REGISTRY)
