import json

import pytest

from randmon.config import (
    config_hash,
    load_config,
    load_config_dict,
    serialize_config,
)
from randmon.errors import ParseError, ValidationError

MINIMAL = {"plant": {"preset": "ugv"}, "horizon": 1000, "seed": 1}


def test_minimal_preset_defaults():
    cfg = load_config_dict(dict(MINIMAL))
    assert cfg.window == 100
    assert cfg.rate_window == 100
    assert cfg.alpha_des == {"wsr": 0.05, "sir": 0.05, "bdd": 0.05, "cusum": 0.05}
    assert abs(cfg.alpha_tau - 0.15) < 1e-12
    assert cfg.detector_kind == "both"
    assert cfg.plant_spec["ts"] == 0.05


def test_alpha_out_of_range_named():
    raw = dict(MINIMAL)
    raw["monitors"] = {"alpha_des": 1.5}
    with pytest.raises(ValidationError) as err:
        load_config_dict(raw)
    assert any("monitors.alpha_des" in p for p in err.value.problems)


def test_per_test_alpha():
    raw = dict(MINIMAL)
    raw["monitors"] = {"alpha_des": {"wsr": 0.05, "cusum": 0.02}}
    cfg = load_config_dict(raw)
    assert cfg.alpha_des["wsr"] == 0.05
    assert cfg.alpha_des["cusum"] == 0.02
    assert cfg.alpha_des["sir"] == 0.05  # unlisted tests take the default


def test_unknown_keys_rejected_everywhere():
    for raw in (
        {**MINIMAL, "extra": 1},
        {**MINIMAL, "plant": {"preset": "ugv", "oops": 2}},
        {**MINIMAL, "monitors": {"windw": 100}},
        {**MINIMAL, "detectors": {"knd": "both"}},
        {**MINIMAL, "attacks": [{"kind": "none", "startt": 0, "stop": 10}]},
    ):
        with pytest.raises(ValidationError) as err:
            load_config_dict(raw)
        assert any("unknown key" in p for p in err.value.problems)


def test_horizon_must_cover_warmup():
    raw = dict(MINIMAL)
    raw["horizon"] = 150
    with pytest.raises(ValidationError) as err:
        load_config_dict(raw)
    assert any("horizon" in p for p in err.value.problems)


def test_attack_sensor_range_checked():
    raw = dict(MINIMAL)
    raw["attacks"] = [{"kind": "none", "sensors": [7], "start": 0, "stop": 100}]
    with pytest.raises(ValidationError) as err:
        load_config_dict(raw)
    assert any("sensors" in p for p in err.value.problems)


def test_overlapping_attacks_rejected():
    raw = dict(MINIMAL)
    raw["attacks"] = [
        {"kind": "bias_concentrate", "sensors": [0], "start": 100, "stop": 500},
        {"kind": "pattern_runs", "sensors": [0], "start": 400, "stop": 800},
    ]
    with pytest.raises(ValidationError) as err:
        load_config_dict(raw)
    assert any("overlaps" in p for p in err.value.problems)


def test_non_overlapping_attacks_pass():
    raw = dict(MINIMAL)
    raw["attacks"] = [
        {"kind": "bias_concentrate", "sensors": [0], "start": 100, "stop": 400},
        {"kind": "pattern_runs", "sensors": [0], "start": 500, "stop": 800},
        {"kind": "bias_concentrate", "sensors": [1], "start": 100, "stop": 400},
    ]
    cfg = load_config_dict(raw)
    assert len(cfg.attacks) == 3


def test_all_violations_reported_together():
    raw = dict(MINIMAL)
    raw["monitors"] = {"alpha_des": 2.0, "window": 1}
    raw["detectors"] = {"kind": "nonsense"}
    with pytest.raises(ValidationError) as err:
        load_config_dict(raw)
    assert len(err.value.problems) >= 3


def test_round_trip_and_stable_hash(tmp_path):
    raw = dict(MINIMAL)
    raw["attacks"] = [{"kind": "pattern_runs", "sensors": [0], "start": 200, "stop": 900}]
    cfg = load_config_dict(raw)
    text = serialize_config(cfg)
    cfg2 = load_config_dict(json.loads(text))
    assert cfg2.to_dict() == cfg.to_dict()
    assert config_hash(cfg2) == config_hash(cfg)
    path = tmp_path / "scenario.json"
    path.write_text(text)
    cfg3 = load_config(path)
    assert config_hash(cfg3) == config_hash(cfg)


def test_parse_error_reports_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"plant": {"preset": "ugv",}}')
    with pytest.raises(ParseError) as err:
        load_config(path)
    assert "broken.json" in str(err.value)


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_config(tmp_path / "absent.json")


def test_explicit_plant_requires_matrices():
    raw = {"plant": {"A": [[0.5]]}, "horizon": 1000, "seed": 0}
    with pytest.raises(ValidationError) as err:
        load_config_dict(raw)
    missing = [p for p in err.value.problems if "required" in p]
    assert len(missing) == 4  # B, C, Q, R
