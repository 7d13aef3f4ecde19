"""Scenario configuration files.

Configs are INI-style files read with :mod:`configparser`; every value is a
JSON literal (numbers, ``true``/``false``/``null``, double-quoted strings,
lists). See the README for the full schema.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import re
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import AgentState
from .inference import FeatureModel, ObservationModel
from .objective import ObjectiveWeights
from .planner import PlannerConfig
from .predictor import PredictorConfig
from .sim.agents import AgentPolicyConfig
from .sim.scenarios import AgentSpec, BeliefSettings, LaneSpec, ScenarioConfig

# sections that map one-to-one onto a settings dataclass
SETTINGS = {
    "weights": ObjectiveWeights,
    "predictor": PredictorConfig,
    "planner": PlannerConfig,
    "agent_policy": AgentPolicyConfig,
    "feature_model": FeatureModel,
    "observation": ObservationModel,
    "belief": BeliefSettings,
}
SCENARIO_KEYS = {"name", "kind", "episode_length", "rng_seed", "stop_on_success"}
EGO_KEYS = {"spawn", "target_lane", "target_speed", "exit_s"}
AGENT_KEYS = {"spawn", "phi", "route", "v_desired", "switch_time", "switch_phi"}
LANE_KEYS = {"points", "width", "connector"}
MATRIX_FIELDS = {("weights", "Q"), ("weights", "R")}
AGENT_PREFIX = "agent."


class ConfigError(ValueError):
    """Invalid config; ``path`` names the offending field and ``line`` its line (if known)."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = f"line {line}: " if line is not None else ""
        field_ = f"{path}: " if path else ""
        super().__init__(f"{where}{field_}{message}")


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^([^\s=:#;][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """1-based line numbers of section headers and keys."""
    index: dict[tuple[str, str | None], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip()), no)
    return index


def _parse_value(raw: str, path: str, line: int | None) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"value {raw!r} is not a JSON literal ({exc.msg}); strings need double quotes",
                          path, line) from None


def _to_state(value, path, line) -> AgentState:
    if not (isinstance(value, list) and len(value) == 4 and all(isinstance(v, (int, float)) for v in value)):
        raise ConfigError("expected [x, y, theta, v]", path, line)
    return AgentState(*(float(v) for v in value))


def _to_phi(value, path, line) -> tuple[float, float, float] | None:
    if value is None:
        return None
    if not (isinstance(value, list) and len(value) == 3 and all(isinstance(v, (int, float)) for v in value)):
        raise ConfigError("expected three behavior weights", path, line)
    return tuple(float(v) for v in value)


def _coerce(section: str, name: str, value, default, path, line):
    """Match a JSON value to the type of the dataclass default."""
    if (section, name) in MATRIX_FIELDS:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 1:
            arr = np.diag(arr)
        return arr
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", path, line)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError("expected an integer", path, line)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", path, line)
        return float(value)
    if default is None and value is not None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number or null", path, line)
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError("expected a list", path, line)
        return tuple(float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in value)
    return value


def _field_defaults(cls) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


def parse_config(text: str, name: str = "scenario") -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from config text.

    Raises:
        ConfigError: On syntax errors, unknown sections or keys, bad value
            types, or scenario invariant violations.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="__defaults__")
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("missing section header", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("cannot parse line", line=line) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(exc.message.split(":")[-1].strip(), line=exc.lineno) from None
    lines = _line_index(text)

    def values(section: str, allowed: set[str] | None) -> dict[str, tuple[Any, str, int | None]]:
        out = {}
        for key, raw in parser[section].items():
            path = f"{section}.{key}"
            line = lines.get((section, key))
            if allowed is not None and key not in allowed:
                raise ConfigError("unknown key", path, line)
            out[key] = (_parse_value(raw, path, line), path, line)
        return out

    for section in parser.sections():
        if section in SETTINGS or section in ("scenario", "lanes", "ego") or section.startswith(AGENT_PREFIX):
            continue
        raise ConfigError("unknown section", section, lines.get((section, None)))
    for required in ("scenario", "lanes", "ego"):
        if not parser.has_section(required):
            raise ConfigError("missing required section", required)

    scen = values("scenario", SCENARIO_KEYS)
    kw: dict[str, Any] = {"name": name}
    for key, (val, path, line) in scen.items():
        default = {"name": "", "kind": "", "episode_length": 20.0, "rng_seed": 0, "stop_on_success": True}[key]
        kw[key] = val if key in ("name", "kind") else _coerce("scenario", key, val, default, path, line)
        if key in ("name", "kind") and not isinstance(val, str):
            raise ConfigError("expected a string", path, line)
    if "kind" not in kw:
        raise ConfigError("missing required key", "scenario.kind")

    lanes = []
    for lane_id, (val, path, line) in values("lanes", None).items():
        if not isinstance(val, dict) or "points" not in val:
            raise ConfigError('expected {"points": [[x, y], ...]} with optional width/connector', path, line)
        extra = set(val) - LANE_KEYS
        if extra:
            raise ConfigError(f"unknown lane keys {sorted(extra)}", path, line)
        try:
            lanes.append(LaneSpec(lane_id, [tuple(float(c) for c in p) for p in val["points"]],
                                  float(val.get("width", LaneSpec.width)), bool(val.get("connector", False))))
            lanes[-1].build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path, line) from None
    kw["lanes"] = lanes

    ego = values("ego", EGO_KEYS)
    for key in ("spawn", "target_lane", "target_speed"):
        if key not in ego:
            raise ConfigError("missing required key", f"ego.{key}", lines.get(("ego", None)))
    kw["ego_spawn"] = _to_state(*ego["spawn"])
    val, path, line = ego["target_lane"]
    if not isinstance(val, str):
        raise ConfigError("expected a lane id string", path, line)
    kw["ego_lane"] = val
    kw["ego_speed"] = _coerce("ego", "target_speed", ego["target_speed"][0], 0.0, *ego["target_speed"][1:])
    if "exit_s" in ego and ego["exit_s"][0] is not None:
        kw["exit_s"] = _coerce("ego", "exit_s", ego["exit_s"][0], 0.0, *ego["exit_s"][1:])

    agents = []
    for section in parser.sections():
        if not section.startswith(AGENT_PREFIX):
            continue
        aid = section[len(AGENT_PREFIX):]
        a = values(section, AGENT_KEYS)
        for key in ("spawn", "phi", "route"):
            if key not in a:
                raise ConfigError("missing required key", f"{section}.{key}", lines.get((section, None)))
        route, rpath, rline = a["route"]
        if not isinstance(route, str):
            raise ConfigError("expected a lane id string", rpath, rline)
        spec = AgentSpec(aid, _to_state(*a["spawn"]), _to_phi(*a["phi"]), route)
        if "v_desired" in a:
            spec.v_desired = _coerce(section, "v_desired", a["v_desired"][0], 0.0, *a["v_desired"][1:])
        if "switch_time" in a and a["switch_time"][0] is not None:
            spec.switch_time = _coerce(section, "switch_time", a["switch_time"][0], 0.0, *a["switch_time"][1:])
        if "switch_phi" in a:
            spec.switch_phi = _to_phi(*a["switch_phi"])
        agents.append(spec)
    kw["agents"] = agents

    for section, cls in SETTINGS.items():
        if not parser.has_section(section):
            continue
        defaults = _field_defaults(cls)
        fields_kw = {}
        for key, (val, path, line) in values(section, set(defaults)).items():
            fields_kw[key] = _coerce(section, key, val, defaults[key], path, line)
        try:
            kw[section] = cls(**fields_kw)
        except (TypeError, ValueError) as exc:
            msg = str(exc)
            key = next((k for k in fields_kw if re.search(rf"\b{re.escape(k)}\b", msg)), None)
            path = f"{section}.{key}" if key else section
            raise ConfigError(msg, path, lines.get((section, key))) from None

    try:
        return ScenarioConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ScenarioConfig:
    """Read a scenario config file; the scenario name defaults to the file stem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, name=path.stem)


def _settings_dict(obj) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def config_to_dict(cfg: ScenarioConfig) -> dict[str, dict[str, Any]]:
    """Plain nested dict mirroring the file layout (used for writing and comparison)."""
    out: dict[str, dict[str, Any]] = {
        "scenario": {"name": cfg.name, "kind": cfg.kind, "episode_length": cfg.episode_length,
                     "rng_seed": cfg.rng_seed, "stop_on_success": cfg.stop_on_success},
        "lanes": {ls.lane_id: {"points": [list(p) for p in ls.points], "width": ls.width,
                               "connector": ls.connector} for ls in cfg.lanes},
        "ego": {"spawn": cfg.ego_spawn.as_array().tolist(), "target_lane": cfg.ego_lane,
                "target_speed": cfg.ego_speed, "exit_s": cfg.exit_s},
    }
    for a in cfg.agents:
        out[f"{AGENT_PREFIX}{a.agent_id}"] = {
            "spawn": a.spawn.as_array().tolist(), "phi": list(a.phi), "route": a.route,
            "v_desired": a.v_desired, "switch_time": a.switch_time,
            "switch_phi": None if a.switch_phi is None else list(a.switch_phi)}
    for section in SETTINGS:
        out[section] = _settings_dict(getattr(cfg, section))
    return out


def format_config(cfg: ScenarioConfig) -> str:
    """Config text for ``cfg``; every field is written explicitly."""
    blocks = []
    for section, items in config_to_dict(cfg).items():
        body = "\n".join(f"{k} = {json.dumps(v)}" for k, v in items.items())
        blocks.append(f"[{section}]\n{body}\n")
    return "\n".join(blocks)


def write_config(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(cfg))
    return path


def bundled_config_path(name: str) -> Path:
    """Path of a bundled config such as ``merge_a2`` (with or without ``.cfg``)."""
    stem = name[:-4] if name.endswith(".cfg") else name
    return Path(__file__).parent / "configs" / f"{stem}.cfg"
