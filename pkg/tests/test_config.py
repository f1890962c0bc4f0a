import pytest

from frlevy.config import SCHEMA, ConfigError, parse_config

POISSON = """
command = "solve-poisson"
[fractional]
beta = [0.3]
"""


def test_minimal_poisson_config_fills_defaults():
    cfg = parse_config(POISSON)
    assert cfg.command == "solve-poisson"
    assert cfg["fractional.beta"] == (0.3,)
    assert cfg["domain.cells"] == SCHEMA["domain.cells"][1]
    assert cfg["replicas"] == 1 and cfg["seed"] is None
    assert cfg.warnings == ()
    assert len(cfg.text_sha256) == 64


def test_beta_out_of_range():
    with pytest.raises(ConfigError, match=r"beta\[1\] out of \(0, 0.5\)"):
        parse_config(POISSON.replace("[0.3]", "[0.7]"))
    with pytest.raises(ConfigError, match=r"beta\[2\] out of \(0, 0.5\): 0.5"):
        parse_config(POISSON.replace("[0.3]", "[0.3, 0.5]"))


def test_every_problem_is_listed():
    text = POISSON + "\nbogus = 1\n[domain]\ncells = [4]\nt_end = -1.0\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    problems = info.value.problems
    assert any("bogus: unknown key" in p for p in problems)


def test_range_problems_are_listed_together():
    text = POISSON + "\n[domain]\ncells = [4]\nt_end = -1.0\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    joined = " | ".join(info.value.problems)
    assert "domain.cells" in joined and "domain.t_end" in joined


def test_missing_required_and_type_errors():
    with pytest.raises(ConfigError, match="fractional.beta: missing required key"):
        parse_config('command = "solve-poisson"\n')
    with pytest.raises(ConfigError, match="command: missing required key"):
        parse_config("[fractional]\nbeta = [0.3]\n")
    with pytest.raises(ConfigError, match="domain.t_end: expected a finite number"):
        parse_config(POISSON + '\n[domain]\nt_end = "soon"\n')


def test_malformed_document():
    with pytest.raises(ConfigError, match="malformed config"):
        parse_config("command = = 3")


def test_picard_condition_warning_d4():
    text = """
command = "solve-quasilinear"
[fractional]
beta = [0.2, 0.2, 0.2, 0.2]
beta0 = 0.3
"""
    cfg = parse_config(text)
    assert cfg.conditions["picard_condition"] is False
    assert any(w.startswith("picard_condition violated") for w in cfg.warnings)


def test_heat_condition_flag():
    text = """
command = "solve-heat"
[fractional]
beta = [0.01, 0.01, 0.01, 0.01]
beta0 = 0.01
"""
    cfg = parse_config(text)
    assert cfg.conditions == {"heat_l2_condition": False}
    assert any("heat_l2_condition" in w for w in cfg.warnings)


def test_validate_needs_no_beta():
    cfg = parse_config('command = "validate"\n')
    assert cfg.command == "validate"


def test_model_errors_are_reported():
    with pytest.raises(ConfigError, match="model"):
        parse_config(POISSON + "\n[model]\nmarks = [1.0, 2.0]\nprobs = [0.5, 0.7]\n")
