"""Scenario files: YAML documents with fixed sections and documented defaults.

Sections: ``plant``, ``rider``, ``controller``, ``shared_control``,
``profile``, ``sim``, ``output``.  Every key is optional; unknown keys are
rejected.  A ``manifest`` section (written into run manifests) is accepted
and ignored, so a manifest is itself a runnable scenario.
"""
from __future__ import annotations

import copy
import functools
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .controllers import AdmittanceTuning, BalanceController, SharedControlMode, TorqueLoopConfig
from .dynamics import PlantParams, State
from .gains import TABLE_I, GainVector, LqrWeights, RiderParams, personalize_gains
from .metrics import ONSET_SPEED, motion_onset
from .rider import RampHold, Script, Sinusoid, TorsoParams, Trapezoid, WrenchMode
from .sim import RiderModel, SimConfig, TrajectoryLog, run_trial_set

SCENARIO_DIR_ENV = "RIDEBOT_SCENARIO_DIR"


class ConfigError(ValueError):
    """Invalid scenario; ``path`` is the dotted key at fault when known."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


DEFAULTS = {
    "plant": {
        "m_W": 4.0,
        "m_B": 50.0,
        "r_W": 0.115,
        "l_B": 0.35,
        "h_P": 0.55,
        "I_W": None,
        "I_B": 2.0,
        "b_theta": 0.1,
        "b_phi": 1.0,
        "g": 9.81,
    },
    "rider": {
        "subject": None,
        "height": 1.8,
        "weight": 60.0,
        "torso_mass_fraction": 0.578,
        "torso_com_fraction_of_height": 0.19,
        "torso_gyration_fraction": 0.25,
        "seat_height_above_ball_center": 0.55,
        "max_lean": 0.6,
        "mode": "quasi_static",
    },
    "controller": {
        "kind": "ihacs",
        "gains": "auto",
        "nominal_height": 1.8,
        "nominal_weight": 60.0,
        "Q_diag": [100.0, 0.0, 1.0, 10.0],
        "R": 1.0,
        "theta_max": 0.52,
        "wrench_filter_hz": None,
        "admittance": {
            "virtual_mass": 0.5,
            "virtual_damping": 1.0,
            "sensitivity": 0.2,
            "deadband": 2.0,
            "v_max": 1.4,
        },
        "torque": {
            "mode": "ideal",
            "limit": 100.0,
            "time_constant": 0.02,
            "k_p": 0.5,
            "k_i": 20.0,
            "actuator_gain": 1.0,
            "integrator_limit": 50.0,
        },
    },
    "shared_control": {"mode": "passthrough", "v_lim": 0.5},
    "profile": {
        "kind": "ramp_hold",
        "target": 0.35,
        "rate": 0.1,
        "hold": math.inf,
        "start": 0.5,
    },
    "sim": {
        "dt_physics": 2.5e-4,
        "control_rate": 400.0,
        "duration": 10.0,
        "sensor_noise_std": [0.0, 0.0, 0.0],
        "seed": 0,
        "trials": 3,
        "tilt_abort": 0.9 * math.pi / 2,
        "position_limit": math.inf,
        "command_delay_ticks": 0,
        "initial_tilt": 0.0,
    },
    "output": {
        "window": "full",
        "window_start": None,
        "window_end": None,
        "onset_speed": ONSET_SPEED,
    },
}

PROFILE_KEYS = {
    "none": {"kind"},
    "ramp_hold": {"kind", "target", "rate", "hold", "start"},
    "trapezoid": {"kind", "amplitude", "rate", "hold", "cycles", "start"},
    "sinusoid": {"kind", "amplitude", "frequency", "start"},
    "script": {"kind", "times", "values"},
}
PROFILE_DEFAULTS = {
    "ramp_hold": {"target": 0.35, "rate": 0.1, "hold": math.inf, "start": 0.5},
    "trapezoid": {"amplitude": 0.35, "rate": 0.3, "hold": 1.0, "cycles": 1, "start": 0.5},
    "sinusoid": {"amplitude": 0.2, "frequency": 0.25, "start": 0.5},
    "script": {"times": [0.0, 1.0], "values": [0.0, 0.0]},
    "none": {},
}
CHOICES = {
    ("rider", "mode"): {"quasi_static", "dynamic"},
    ("controller", "gains"): {"auto", "personalized", "nominal"},
    ("controller", "torque", "mode"): {"ideal", "lag"},
    ("shared_control", "mode"): {"passthrough", "idle", "speed_limit"},
    ("output", "window"): {"full", "onset_to_cue"},
}
KINDS = ("hacs", "ihacs")


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(given).__name__}", path)
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(f"unknown key '{where}'", where)
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value or {}, where)
        else:
            out[key] = value
    return out


def _check_number(cfg, path, *, positive=False, nonneg=False, allow_none=False):
    node = cfg
    for p in path[:-1]:
        node = node[p]
    value = node[path[-1]]
    where = ".".join(path)
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{where}' must be a number, got {value!r}", where)
    node[path[-1]] = float(value)
    if positive and not value > 0:
        raise ConfigError(f"'{where}' must be > 0, got {value!r}", where)
    if nonneg and not value >= 0:
        raise ConfigError(f"'{where}' must be >= 0, got {value!r}", where)


def resolve(raw: dict | None) -> dict:
    """Merge a parsed scenario document with defaults and validate it."""
    raw = dict(raw or {})
    raw.pop("manifest", None)
    profile_raw = raw.pop("profile", None) or {}
    cfg = _merge({k: v for k, v in DEFAULTS.items() if k != "profile"}, raw, "")

    kind = profile_raw.get("kind", DEFAULTS["profile"]["kind"]) if isinstance(profile_raw, dict) else None
    if kind not in PROFILE_KEYS:
        raise ConfigError(f"'profile.kind' must be one of {sorted(PROFILE_KEYS)}, got {kind!r}", "profile.kind")
    cfg["profile"] = _merge({"kind": kind, **PROFILE_DEFAULTS[kind]}, profile_raw, "profile")

    for path, allowed in CHOICES.items():
        node = cfg
        for p in path[:-1]:
            node = node[p]
        if node[path[-1]] not in allowed:
            raise ConfigError(f"'{'.'.join(path)}' must be one of {sorted(allowed)}, got {node[path[-1]]!r}", ".".join(path))

    kinds = cfg["controller"]["kind"]
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    if not kinds or any(k not in KINDS for k in kinds) or len(set(kinds)) != len(kinds):
        raise ConfigError(f"'controller.kind' must be 'hacs', 'ihacs' or a list of them, got {cfg['controller']['kind']!r}", "controller.kind")
    cfg["controller"]["kind"] = kinds[0] if len(kinds) == 1 else kinds

    subject = cfg["rider"]["subject"]
    if subject is not None:
        if subject not in TABLE_I:
            raise ConfigError(f"'rider.subject' must be one of {sorted(TABLE_I)}, got {subject!r}", "rider.subject")
        given = raw.get("rider") or {}
        for key in ("height", "weight"):
            if key not in given:
                cfg["rider"][key] = getattr(TABLE_I[subject], key)

    for section, keys in (
        ("plant", ["m_W", "m_B", "r_W", "l_B", "h_P", "I_B", "g"]),
        ("rider", ["height", "weight", "max_lean", "seat_height_above_ball_center"]),
        ("sim", ["dt_physics", "control_rate", "duration", "tilt_abort", "position_limit"]),
    ):
        for key in keys:
            _check_number(cfg, (section, key), positive=True)
    for key in ("b_theta", "b_phi"):
        _check_number(cfg, ("plant", key), nonneg=True)
    _check_number(cfg, ("plant", "I_W"), positive=True, allow_none=True)
    for key in ("torso_mass_fraction", "torso_com_fraction_of_height", "torso_gyration_fraction"):
        _check_number(cfg, ("rider", key), positive=True)
    for key in ("nominal_height", "nominal_weight", "R", "theta_max"):
        _check_number(cfg, ("controller", key), positive=True)
    _check_number(cfg, ("controller", "wrench_filter_hz"), positive=True, allow_none=True)
    for key, value in cfg["controller"]["admittance"].items():
        _check_number(cfg, ("controller", "admittance", key), nonneg=(key == "deadband"), positive=(key != "deadband"))
    for key in cfg["controller"]["torque"]:
        if key != "mode":
            _check_number(cfg, ("controller", "torque", key), positive=True)
    _check_number(cfg, ("shared_control", "v_lim"), positive=True)
    _check_number(cfg, ("sim", "initial_tilt"))
    _check_number(cfg, ("output", "onset_speed"), positive=True)
    for key in ("window_start", "window_end"):
        _check_number(cfg, ("output", key), nonneg=True, allow_none=True)

    q = cfg["controller"]["Q_diag"]
    if not (isinstance(q, list) and len(q) == 4 and all(isinstance(x, (int, float)) for x in q)):
        raise ConfigError(f"'controller.Q_diag' must be a list of 4 numbers, got {q!r}", "controller.Q_diag")
    cfg["controller"]["Q_diag"] = [float(x) for x in q]
    noise = cfg["sim"]["sensor_noise_std"]
    if isinstance(noise, (int, float)) and not isinstance(noise, bool):
        noise = [noise] * 3
    if not (isinstance(noise, list) and len(noise) == 3 and all(isinstance(x, (int, float)) and x >= 0 for x in noise)):
        raise ConfigError(f"'sim.sensor_noise_std' must be 3 non-negative numbers, got {noise!r}", "sim.sensor_noise_std")
    cfg["sim"]["sensor_noise_std"] = [float(x) for x in noise]
    for key in ("seed", "trials", "command_delay_ticks"):
        value = cfg["sim"][key]
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigError(f"'sim.{key}' must be a non-negative integer, got {value!r}", f"sim.{key}")
    if cfg["sim"]["trials"] < 1:
        raise ConfigError("'sim.trials' must be >= 1")

    prof = cfg["profile"]
    for key, value in prof.items():
        if key == "kind":
            continue
        if key in ("times", "values"):
            if not (isinstance(value, list) and all(isinstance(x, (int, float)) for x in value)):
                raise ConfigError(f"'profile.{key}' must be a list of numbers", f"profile.{key}")
            prof[key] = [float(x) for x in value]
        elif key == "cycles":
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"'profile.cycles' must be a positive integer, got {value!r}", "profile.cycles")
        else:
            _check_number(cfg, ("profile", key))

    # build everything once so domain-level validation errors surface here
    try:
        sc = Scenario("check", cfg)
        sc.plant()
        sc.rider_params()
        sc.rider_model()
        for k in sc.kinds():
            sc.controller(k)
        sc.sim_config(cfg["sim"]["seed"])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return {k: cfg[k] for k in DEFAULTS}


def load_text(text: str, source: str = "<string>") -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{source}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    try:
        return resolve(raw)
    except ConfigError as exc:
        line = _line_of(text, exc.path) if exc.path else None
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{source}{where}: {exc}", exc.path) from exc


def _line_of(text: str, dotted: str) -> int | None:
    """1-based line of the deepest key of ``dotted`` present in the document."""
    node = yaml.compose(text)
    line = None
    for key in dotted.split("."):
        if not isinstance(node, yaml.MappingNode):
            break
        for k, v in node.value:
            if k.value == key:
                line, node = k.start_mark.line + 1, v
                break
        else:
            break
    return line


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("ridebot.scenarios").iterdir() if p.name.endswith(".yaml"))


def find_scenario(name_or_path: str) -> Path:
    """Resolve a path, else a name in ``$RIDEBOT_SCENARIO_DIR``, else a bundled scenario."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    stem = name_or_path[:-5] if name_or_path.endswith(".yaml") else name_or_path
    env = os.environ.get(SCENARIO_DIR_ENV)
    if env and (Path(env) / f"{stem}.yaml").is_file():
        return Path(env) / f"{stem}.yaml"
    bundled = resources.files("ridebot.scenarios") / f"{stem}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")


def load(name_or_path: str) -> Scenario:
    path = find_scenario(name_or_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc}") from exc
    name = path.stem if path.stem != "manifest" else path.parent.name
    return Scenario(name, load_text(text, str(path)))


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of a raw/resolved config with ``dotted`` replaced by ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown parameter path '{dotted}'")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown parameter path '{dotted}'")
    node[keys[-1]] = value
    if dotted == "rider.subject" and value in TABLE_I:
        # a new subject brings its own demographics; later overrides still win
        node["height"], node["weight"] = TABLE_I[value].height, TABLE_I[value].weight
    return out


@dataclass
class Scenario:
    name: str
    config: dict

    def plant(self) -> PlantParams:
        return PlantParams(**self.config["plant"])

    def rider_params(self) -> RiderParams:
        r = {k: v for k, v in self.config["rider"].items() if k not in ("subject", "mode")}
        return RiderParams(**r)

    def kinds(self) -> list[str]:
        k = self.config["controller"]["kind"]
        return [k] if isinstance(k, str) else list(k)

    def weights(self) -> LqrWeights:
        c = self.config["controller"]
        return LqrWeights.from_diag(c["Q_diag"], c["R"])

    def gains(self, kind: str) -> GainVector:
        c = self.config["controller"]
        mode = c["gains"]
        if mode == "auto":
            mode = "nominal" if kind == "hacs" else "personalized"
        rider = _nominal_rider(self.config, c) if mode == "nominal" else self.rider_params()
        return personalize_gains(rider, self.plant(), self.weights())

    def controller(self, kind: str) -> BalanceController:
        c = self.config["controller"]
        sc = self.config["shared_control"]
        gov = SharedControlMode(sc["mode"], sc["v_lim"] if sc["mode"] == "speed_limit" else None)
        return BalanceController(
            kind,
            self.gains(kind),
            self.plant(),
            tuning=AdmittanceTuning(**c["admittance"]),
            governor=gov,
            torque=TorqueLoopConfig(**c["torque"]),
            dt=1.0 / self.config["sim"]["control_rate"],
            theta_max=c["theta_max"],
            wrench_filter_hz=c["wrench_filter_hz"],
        )

    def profile(self):
        p = dict(self.config["profile"])
        kind = p.pop("kind")
        max_lean = self.config["rider"]["max_lean"]
        if kind == "none":
            return None
        cls = {"ramp_hold": RampHold, "trapezoid": Trapezoid, "sinusoid": Sinusoid, "script": Script}[kind]
        if kind == "script":
            return Script(tuple(p["times"]), tuple(p["values"]), max_lean=max_lean)
        return cls(**p, max_lean=max_lean)

    def rider_model(self) -> RiderModel:
        prof = self.profile()
        torso = TorsoParams.from_rider(self.rider_params())
        return RiderModel(torso, prof, WrenchMode(self.config["rider"]["mode"]))

    def seeds(self) -> list[int]:
        s = self.config["sim"]
        return [s["seed"] + i for i in range(s["trials"])]

    def sim_config(self, seed: int) -> SimConfig:
        s = self.config["sim"]
        return SimConfig(
            dt_physics=s["dt_physics"],
            control_rate=s["control_rate"],
            duration=s["duration"],
            sensor_noise_std=tuple(s["sensor_noise_std"]),
            seed=seed,
            tilt_abort=s["tilt_abort"],
            position_limit=s["position_limit"],
            command_delay_ticks=s["command_delay_ticks"],
        )

    def initial_state(self) -> State:
        return State(self.config["sim"]["initial_tilt"], 0.0, 0.0, 0.0)

    def run(self, kind: str, workers: int = 1) -> list[TrajectoryLog]:
        return run_trial_set(functools.partial(_build, self.config, kind), self.seeds(), workers)

    def window(self, log) -> tuple[float, float]:
        out = self.config["output"]
        t = log["t"]
        t0, tf = float(t[0]), float(t[-1])
        if out["window"] == "onset_to_cue":
            onset = motion_onset(log, out["onset_speed"])
            if onset is not None:
                t0 = onset
            prof = self.profile()
            if isinstance(prof, RampHold) and math.isfinite(prof.hold):
                tf = min(tf, prof.release_time)
        if out["window_start"] is not None:
            t0 = out["window_start"]
        if out["window_end"] is not None:
            tf = min(tf, out["window_end"])
        if not t0 < tf:
            t0, tf = float(t[0]), float(t[-1])
        return t0, tf


def _nominal_rider(cfg, c) -> RiderParams:
    r = {k: v for k, v in cfg["rider"].items() if k not in ("subject", "mode")}
    r.update(height=c["nominal_height"], weight=c["nominal_weight"])
    return RiderParams(**r)


def _build(config: dict, kind: str, seed: int):
    sc = Scenario("trial", config)
    return sc.plant(), sc.rider_model(), sc.controller(kind), sc.sim_config(seed), sc.initial_state()
