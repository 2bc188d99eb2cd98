"""Scenario configuration: JSON schema, strict validation, canonical hashing.

Configs are plain JSON. Unknown keys are rejected at every level so typos in
experiment sweeps fail loudly, and validation reports every violated
invariant at once rather than stopping at the first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attacks import ATTACK_KINDS, AttackPlan
from .errors import ParseError, ValidationError
from .lti import LtiPlant, UgvParams, discretize_ugv

SCHEMA_VERSION = 1

MONITOR_TESTS = ("wsr", "sir", "bdd", "cusum")

#: default measurement/process noise for the UGV preset (velocity, heading,
#: yaw rate channels)
UGV_DEFAULT_Q = [1e-5, 1e-6, 1e-5]
UGV_DEFAULT_R = [4e-4, 1e-4, 2.5e-4]

_PLANT_KEYS = {"preset", "params", "ts", "q_diag", "r_diag", "A", "B", "C", "Q", "R"}
_UGV_PARAM_KEYS = {"mass", "inertia", "width", "roll_resistance", "turn_resistance"}
_CONTROLLER_KEYS = {"mode", "state_weights", "input_weights", "K", "kr"}
_MONITOR_KEYS = {"window", "rate_window", "alpha_des", "alpha_tau"}
_DETECTOR_KEYS = {"kind", "bias_scale", "tuning_samples", "tuning_seed"}
_ATTACK_KEYS = {"kind", "sensors", "start", "stop", "params"}
_OUTPUT_KEYS = {"dir", "format"}
_TOP_KEYS = {"plant", "controller", "monitors", "detectors", "attacks", "horizon", "seed", "output"}

DEFAULT_TUNING_SEED = 7_654_321


@dataclass
class ScenarioConfig:
    """Fully-resolved description of one simulation run."""

    plant_spec: dict
    controller_spec: dict
    window: int
    rate_window: int
    alpha_des: dict            # per test name
    alpha_tau: float
    detector_kind: str         # 'bdd' | 'cusum' | 'both'
    bias_scale: float
    tuning_samples: int
    tuning_seed: int
    attacks: list[AttackPlan]
    horizon: int
    seed: int
    output_dir: Optional[str] = None
    output_format: str = "csv"

    def to_dict(self) -> dict:
        """Canonical plain-dict form; round-trips through load_config_dict."""
        return {
            "plant": dict(self.plant_spec),
            "controller": dict(self.controller_spec),
            "monitors": {
                "window": self.window,
                "rate_window": self.rate_window,
                "alpha_des": dict(self.alpha_des),
                "alpha_tau": self.alpha_tau,
            },
            "detectors": {
                "kind": self.detector_kind,
                "bias_scale": self.bias_scale,
                "tuning_samples": self.tuning_samples,
                "tuning_seed": self.tuning_seed,
            },
            "attacks": [
                {
                    "kind": p.kind,
                    "sensors": list(p.sensors),
                    "start": p.start,
                    "stop": p.stop,
                    "params": dict(p.params),
                }
                for p in self.attacks
            ],
            "horizon": self.horizon,
            "seed": self.seed,
            "output": {"dir": self.output_dir, "format": self.output_format},
        }


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON serialization (stable across reloads)."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def serialize_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def _reject_unknown(mapping: dict, allowed: set, where: str, problems: list) -> None:
    for key in mapping:
        if key not in allowed:
            problems.append(f"{where}: unknown key {key!r}")


def build_plant(spec: dict) -> LtiPlant:
    """Instantiate the plant from its resolved spec dict."""
    if spec.get("preset") == "ugv":
        params = UgvParams(**spec.get("params", {}))
        ts = spec.get("ts", 0.05)
        q = np.diag(spec.get("q_diag", UGV_DEFAULT_Q))
        r = np.diag(spec.get("r_diag", UGV_DEFAULT_R))
        return discretize_ugv(params, ts, q, r)
    return LtiPlant(
        A=np.asarray(spec["A"], dtype=float),
        B=np.asarray(spec["B"], dtype=float),
        C=np.asarray(spec["C"], dtype=float),
        Q=np.asarray(spec["Q"], dtype=float),
        R=np.asarray(spec["R"], dtype=float),
        ts=spec.get("ts", 1.0),
    )


def _validate_plant(spec, problems: list) -> dict:
    if not isinstance(spec, dict):
        problems.append("plant: must be an object")
        return {}
    _reject_unknown(spec, _PLANT_KEYS, "plant", problems)
    out = dict(spec)
    if spec.get("preset") is not None:
        if spec["preset"] != "ugv":
            problems.append(f"plant.preset: unknown preset {spec['preset']!r}")
        params = spec.get("params", {})
        if isinstance(params, dict):
            _reject_unknown(params, _UGV_PARAM_KEYS, "plant.params", problems)
            for key, value in params.items():
                if not isinstance(value, (int, float)) or value <= 0:
                    problems.append(f"plant.params.{key}: must be a positive number")
        else:
            problems.append("plant.params: must be an object")
        if spec.get("ts", 0.05) <= 0:
            problems.append("plant.ts: must be positive")
        for diag_key, dim in (("q_diag", 3), ("r_diag", 3)):
            diag = spec.get(diag_key)
            if diag is not None and (not isinstance(diag, list) or len(diag) != dim):
                problems.append(f"plant.{diag_key}: must be a list of {dim} variances")
        out.setdefault("ts", 0.05)
        out.setdefault("q_diag", list(UGV_DEFAULT_Q))
        out.setdefault("r_diag", list(UGV_DEFAULT_R))
    else:
        for key in ("A", "B", "C", "Q", "R"):
            if key not in spec:
                problems.append(f"plant.{key}: required for explicit plants")
        out.setdefault("ts", 1.0)
    return out


def _validate_alpha(value, where: str, problems: list) -> bool:
    if not isinstance(value, (int, float)) or not 0.0 < value < 1.0:
        problems.append(f"{where}: must be a number in (0, 1), got {value!r}")
        return False
    return True


def load_config_dict(raw: dict) -> ScenarioConfig:
    """Validate a parsed config mapping and fill defaults.

    Raises ``ValidationError`` listing every violated invariant.
    """
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ValidationError(["top level: must be an object"])
    _reject_unknown(raw, _TOP_KEYS, "top level", problems)

    plant_spec = _validate_plant(raw.get("plant", {"preset": "ugv"}), problems)

    controller_spec = raw.get("controller", {"mode": "lqr"})
    if isinstance(controller_spec, dict):
        _reject_unknown(controller_spec, _CONTROLLER_KEYS, "controller", problems)
        controller_spec = dict(controller_spec)
        if "K" not in controller_spec:
            controller_spec.setdefault("mode", "lqr")
    else:
        problems.append("controller: must be an object")
        controller_spec = {"mode": "lqr"}

    monitors = raw.get("monitors", {})
    if not isinstance(monitors, dict):
        problems.append("monitors: must be an object")
        monitors = {}
    _reject_unknown(monitors, _MONITOR_KEYS, "monitors", problems)
    window = monitors.get("window", 100)
    rate_window = monitors.get("rate_window", 100)
    for name, value in (("monitors.window", window), ("monitors.rate_window", rate_window)):
        if not isinstance(value, int) or value < 2:
            problems.append(f"{name}: must be an integer >= 2")

    alpha_raw = monitors.get("alpha_des", 0.05)
    alpha_des: dict = {}
    if isinstance(alpha_raw, dict):
        for key in alpha_raw:
            if key not in MONITOR_TESTS:
                problems.append(f"monitors.alpha_des: unknown test {key!r}")
        for test in MONITOR_TESTS:
            value = alpha_raw.get(test, 0.05)
            if _validate_alpha(value, f"monitors.alpha_des.{test}", problems):
                alpha_des[test] = float(value)
    else:
        if _validate_alpha(alpha_raw, "monitors.alpha_des", problems):
            alpha_des = {test: float(alpha_raw) for test in MONITOR_TESTS}
    if not alpha_des:
        alpha_des = {test: 0.05 for test in MONITOR_TESTS}

    alpha_tau = monitors.get("alpha_tau")
    if alpha_tau is None:
        alpha_tau = 3.0 * max(alpha_des.values())
    if not isinstance(alpha_tau, (int, float)) or not 0.0 < alpha_tau <= 1.0:
        problems.append(f"monitors.alpha_tau: must lie in (0, 1], got {alpha_tau!r}")

    detectors = raw.get("detectors", {})
    if not isinstance(detectors, dict):
        problems.append("detectors: must be an object")
        detectors = {}
    _reject_unknown(detectors, _DETECTOR_KEYS, "detectors", problems)
    detector_kind = detectors.get("kind", "both")
    if detector_kind not in ("bdd", "cusum", "both"):
        problems.append(f"detectors.kind: must be bdd, cusum or both, got {detector_kind!r}")
    bias_scale = detectors.get("bias_scale", 1.5)
    if not isinstance(bias_scale, (int, float)) or bias_scale <= 0:
        problems.append("detectors.bias_scale: must be positive")
    tuning_samples = detectors.get("tuning_samples", 1_000_000)
    if not isinstance(tuning_samples, int) or tuning_samples < 1_000_000:
        problems.append("detectors.tuning_samples: must be an integer >= 1000000")
    tuning_seed = detectors.get("tuning_seed", DEFAULT_TUNING_SEED)

    horizon = raw.get("horizon", 10_000)
    if not isinstance(horizon, int) or horizon < 1:
        problems.append("horizon: must be a positive integer")
    elif isinstance(window, int) and isinstance(rate_window, int) and horizon < window + rate_window:
        problems.append(
            f"horizon: must be >= window + rate_window = {window + rate_window}, got {horizon}"
        )

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        problems.append("seed: must be a nonnegative integer")

    n_sensors = 3 if plant_spec.get("preset") == "ugv" else None
    if n_sensors is None and "C" in plant_spec:
        try:
            n_sensors = len(plant_spec["C"])
        except TypeError:
            n_sensors = None

    attacks_raw = raw.get("attacks", [])
    plans: list[AttackPlan] = []
    if not isinstance(attacks_raw, list):
        problems.append("attacks: must be a list")
        attacks_raw = []
    per_sensor_windows: dict[int, list] = {}
    for idx, entry in enumerate(attacks_raw):
        where = f"attacks[{idx}]"
        if not isinstance(entry, dict):
            problems.append(f"{where}: must be an object")
            continue
        _reject_unknown(entry, _ATTACK_KEYS, where, problems)
        kind = entry.get("kind", "none")
        if kind not in ATTACK_KINDS:
            problems.append(f"{where}.kind: unknown kind {kind!r}")
            continue
        sensors = entry.get("sensors", [0])
        if not isinstance(sensors, list) or not all(isinstance(i, int) for i in sensors):
            problems.append(f"{where}.sensors: must be a list of integer indices")
            continue
        if n_sensors is not None:
            for i in sensors:
                if not 0 <= i < n_sensors:
                    problems.append(f"{where}.sensors: index {i} outside 0..{n_sensors - 1}")
        start = entry.get("start", 0)
        stop = entry.get("stop", horizon if isinstance(horizon, int) else 0)
        if not (isinstance(start, int) and isinstance(stop, int) and 0 <= start < stop):
            problems.append(f"{where}: requires integer 0 <= start < stop")
            continue
        params = entry.get("params", {})
        if not isinstance(params, dict):
            problems.append(f"{where}.params: must be an object")
            continue
        for i in sensors:
            for other_start, other_stop, other_idx in per_sensor_windows.get(i, []):
                if start < other_stop and other_start < stop:
                    problems.append(
                        f"{where}: overlaps attacks[{other_idx}] on sensor {i}; "
                        "replacement-style attacks must not overlap"
                    )
            per_sensor_windows.setdefault(i, []).append((start, stop, idx))
        plans.append(
            AttackPlan(kind=kind, sensors=tuple(sensors), start=start, stop=stop, params=params)
        )

    output = raw.get("output", {})
    if not isinstance(output, dict):
        problems.append("output: must be an object")
        output = {}
    _reject_unknown(output, _OUTPUT_KEYS, "output", problems)
    output_format = output.get("format", "csv")
    if output_format not in ("csv", "jsonl"):
        problems.append(f"output.format: must be csv or jsonl, got {output_format!r}")

    if problems:
        raise ValidationError(problems)

    return ScenarioConfig(
        plant_spec=plant_spec,
        controller_spec=controller_spec,
        window=window,
        rate_window=rate_window,
        alpha_des=alpha_des,
        alpha_tau=float(alpha_tau),
        detector_kind=detector_kind,
        bias_scale=float(bias_scale),
        tuning_samples=tuning_samples,
        tuning_seed=tuning_seed,
        attacks=plans,
        horizon=horizon,
        seed=seed,
        output_dir=output.get("dir"),
        output_format=output_format,
    )


def load_config(path) -> ScenarioConfig:
    """Read, parse and validate a JSON scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return load_config_dict(raw)
