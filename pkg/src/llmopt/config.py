"""Experiment config files: JSON parsing, validation, defaults, hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backends import BACKEND_KINDS
from .errors import ConfigError
from .problems import FunctionName
from .prompting import pool_size
from .tsp import FIXTURES, ViewMode

SCHEMA_VERSION = 1

PROTOCOLS = (
    "baseline",
    "precision_sweep",
    "dimension_scaling",
    "shift_sweep",
    "sampling_probe",
    "coord_heuristics",
    "cityname_heuristics",
)

_LOOP_DEFAULTS = {"n": 16, "m": 4, "max_iterations": 100, "retry_cap": 100}
_SHORT_RUN_PROTOCOLS = ("coord_heuristics", "cityname_heuristics")
_PROMPT_DEFAULTS = {"decimal_digits": 5, "instruction_id": 0, "order": "descend"}

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "baseline": {
        "problems": [{"type": "tsp", "n_cities": n} for n in (10, 15, 20, 25, 30)]
        + [{"type": "continuous", "function": f.value, "dimension": 2} for f in FunctionName],
    },
    "precision_sweep": {
        "function": "sphere",
        "dimension": 2,
        "digits": [1, 2, 3, 4, 5, 6],
        "shift_range": [-0.1, 0.1],
    },
    "dimension_scaling": {
        "function": "sphere",
        "dimensions": [16, 32, 64, 128, 256],
        "shift_range": [-0.1, 0.1],
    },
    "shift_sweep": {
        "functions": ["ackley", "griewank", "rastrigin", "sphere"],
        "magnitudes": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
        "dimension": 2,
    },
    "sampling_probe": {
        "function": "sphere",
        "archive_sets": [1, 2],
        "orders": ["ascend", "descend"],
        "shifts": ["no_shift", "shifted"],
        "shift_range": [-1.0, 1.0],
        "sample_count": 1000,
        "histogram_bins": 20,
    },
    "coord_heuristics": {"n_cities": 15, "instance": None, "views": ["masked", "shifted", "true"]},
    "cityname_heuristics": {
        "fixture": "us_cities15",
        "settings": ["names_only", "coords_only", "names_and_coords"],
    },
}


@dataclass
class ExperimentConfig:
    protocol: str
    seed: int
    repeats: int
    backend: dict[str, Any]
    loop: dict[str, int]
    prompt: dict[str, Any]
    params: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "protocol": self.protocol,
            "seed": self.seed,
            "repeats": self.repeats,
            "backend": copy.deepcopy(self.backend),
            "loop": dict(self.loop),
            "prompt": dict(self.prompt),
            "params": copy.deepcopy(self.params),
        }

    def hash(self) -> str:
        """Digest of everything except the backend, so a replay can be matched to its recording."""
        data = self.to_dict()
        data.pop("backend")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _int(value: Any, path: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"must be an integer, got {value!r}", field=path)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", field=path)
    return value


def _number(value: Any, path: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"must be a number, got {value!r}", field=path)
    return float(value)


def _range(value: Any, path: str) -> list[float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError("must be [low, high]", field=path)
    lo, hi = _number(value[0], path), _number(value[1], path)
    if lo > hi:
        raise ConfigError("low must not exceed high", field=path)
    return [lo, hi]


def _choice_list(value: Any, allowed: tuple[str, ...], path: str) -> list[str]:
    if not isinstance(value, list) or not value:
        raise ConfigError("must be a non-empty list", field=path)
    for i, v in enumerate(value):
        if v not in allowed:
            raise ConfigError(f"unknown value {v!r}; choose from {', '.join(map(str, allowed))}", field=f"{path}[{i}]")
    return list(value)


_FUNCTION_NAMES = tuple(f.value for f in FunctionName)


def _validate_problem(p: Any, path: str) -> dict[str, Any]:
    if not isinstance(p, dict):
        raise ConfigError("must be an object", field=path)
    kind = p.get("type")
    if kind == "tsp":
        sources = [k for k in ("n_cities", "instance", "fixture") if k in p]
        if len(sources) != 1:
            raise ConfigError("give exactly one of n_cities, instance, fixture", field=path)
        if "n_cities" in p:
            _int(p["n_cities"], f"{path}.n_cities", minimum=3)
        if "fixture" in p and p["fixture"] not in FIXTURES:
            raise ConfigError(f"unknown fixture {p['fixture']!r}", field=f"{path}.fixture")
        return dict(p)
    if kind == "continuous":
        if p.get("function") not in _FUNCTION_NAMES:
            raise ConfigError(f"unknown function {p.get('function')!r}", field=f"{path}.function")
        out = dict(p)
        out["dimension"] = _int(p.get("dimension", 2), f"{path}.dimension", minimum=1)
        if "bounds" in p:
            _range(p["bounds"], f"{path}.bounds")
        return out
    raise ConfigError(f"unknown problem type {kind!r}", field=f"{path}.type")


def _validate_params(protocol: str, raw: dict[str, Any]) -> dict[str, Any]:
    params = copy.deepcopy(DEFAULT_PARAMS[protocol])
    unknown = set(raw) - set(params)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)}", field="params")
    params.update(copy.deepcopy(raw))
    path = "params"
    if protocol == "baseline":
        if not isinstance(params["problems"], list) or not params["problems"]:
            raise ConfigError("must be a non-empty list", field=f"{path}.problems")
        params["problems"] = [_validate_problem(p, f"{path}.problems[{i}]") for i, p in enumerate(params["problems"])]
    elif protocol in ("precision_sweep", "dimension_scaling", "sampling_probe"):
        if params["function"] not in _FUNCTION_NAMES:
            raise ConfigError(f"unknown function {params['function']!r}", field=f"{path}.function")
        params["shift_range"] = _range(params["shift_range"], f"{path}.shift_range")
        if protocol == "precision_sweep":
            params["digits"] = [_int(d, f"{path}.digits[{i}]", 0) for i, d in enumerate(params["digits"])]
            _int(params["dimension"], f"{path}.dimension", 1)
        elif protocol == "dimension_scaling":
            params["dimensions"] = [_int(d, f"{path}.dimensions[{i}]", 1) for i, d in enumerate(params["dimensions"])]
        else:
            params["archive_sets"] = _choice_list(params["archive_sets"], (1, 2), f"{path}.archive_sets")  # type: ignore[arg-type]
            params["orders"] = _choice_list(params["orders"], ("ascend", "descend"), f"{path}.orders")
            params["shifts"] = _choice_list(params["shifts"], ("no_shift", "shifted"), f"{path}.shifts")
            _int(params["sample_count"], f"{path}.sample_count", 1)
            _int(params["histogram_bins"], f"{path}.histogram_bins", 1)
    elif protocol == "shift_sweep":
        allowed = tuple(f for f in _FUNCTION_NAMES if f != "rosenbrock")
        if "rosenbrock" in params["functions"]:
            raise ConfigError(
                "rosenbrock is excluded from the shift sweep (its optimum is not symmetric under shifts)",
                field=f"{path}.functions",
            )
        params["functions"] = _choice_list(params["functions"], allowed, f"{path}.functions")
        params["magnitudes"] = [_number(m, f"{path}.magnitudes[{i}]") for i, m in enumerate(params["magnitudes"])]
        if any(m < 0 for m in params["magnitudes"]):
            raise ConfigError("magnitudes must be non-negative", field=f"{path}.magnitudes")
        _int(params["dimension"], f"{path}.dimension", 1)
    elif protocol == "coord_heuristics":
        if params["instance"] is None:
            _int(params["n_cities"], f"{path}.n_cities", 3)
        params["views"] = _choice_list(params["views"], ("masked", "shifted", "true"), f"{path}.views")
    elif protocol == "cityname_heuristics":
        if params["fixture"] not in FIXTURES:
            raise ConfigError(f"unknown fixture {params['fixture']!r}", field=f"{path}.fixture")
        allowed = (ViewMode.NAMES_ONLY.value, ViewMode.COORDS_ONLY.value, ViewMode.NAMES_AND_COORDS.value)
        params["settings"] = _choice_list(params["settings"], allowed, f"{path}.settings")
    return params


def validate_config(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version!r}", field="schema_version")
    allowed_keys = {"schema_version", "protocol", "seed", "repeats", "backend", "loop", "prompt", "params"}
    extra = set(raw) - allowed_keys
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)}", field=sorted(extra)[0])

    protocol = raw.get("protocol")
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}", field="protocol")
    seed = _int(raw.get("seed", 0), "seed", minimum=0)
    repeats = _int(raw.get("repeats", 5), "repeats", minimum=1)

    backend = raw.get("backend")
    if not isinstance(backend, dict):
        raise ConfigError("must be an object with a 'kind'", field="backend")
    if backend.get("kind") not in BACKEND_KINDS:
        raise ConfigError(f"unknown backend kind {backend.get('kind')!r}", field="backend.kind")
    if backend["kind"] == "remote_chat":
        for key in ("base_url", "model"):
            if not backend.get(key):
                raise ConfigError("required for remote_chat", field=f"backend.{key}")
        if "api_key" in backend:
            raise ConfigError("API keys belong in an environment variable, use api_key_env", field="backend.api_key")
        top_p = backend.get("top_p")
        if top_p is not None and not 0 < _number(top_p, "backend.top_p") <= 1:
            raise ConfigError("must lie in (0, 1]", field="backend.top_p")

    loop = dict(_LOOP_DEFAULTS)
    if protocol in _SHORT_RUN_PROTOCOLS:
        loop["max_iterations"] = 30
    raw_loop = raw.get("loop", {})
    if not isinstance(raw_loop, dict):
        raise ConfigError("must be an object", field="loop")
    for key, value in raw_loop.items():
        if key not in loop:
            raise ConfigError("unknown loop setting", field=f"loop.{key}")
        loop[key] = _int(value, f"loop.{key}", minimum=0 if key == "max_iterations" else 1)

    prompt = dict(_PROMPT_DEFAULTS)
    raw_prompt = raw.get("prompt", {})
    if not isinstance(raw_prompt, dict):
        raise ConfigError("must be an object", field="prompt")
    for key, value in raw_prompt.items():
        if key not in prompt:
            raise ConfigError("unknown prompt setting", field=f"prompt.{key}")
        prompt[key] = value
    _int(prompt["decimal_digits"], "prompt.decimal_digits", minimum=0)
    _int(prompt["instruction_id"], "prompt.instruction_id", minimum=0)
    if prompt["instruction_id"] >= min(pool_size("tsp"), pool_size("continuous")):
        raise ConfigError("outside the instruction pool", field="prompt.instruction_id")
    if prompt["order"] not in ("ascend", "descend"):
        raise ConfigError("must be 'ascend' or 'descend'", field="prompt.order")

    raw_params = raw.get("params", {})
    if not isinstance(raw_params, dict):
        raise ConfigError("must be an object", field="params")
    params = _validate_params(protocol, raw_params)
    return ExperimentConfig(protocol, seed, repeats, dict(backend), loop, prompt, params)


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    return validate_config(raw)


def _resolve_paths(config: ExperimentConfig, base: Path) -> None:
    def fix(entry: dict[str, Any]) -> None:
        if entry.get("instance"):
            entry["instance"] = str((base / entry["instance"]).resolve())

    for problem in config.params.get("problems", []):
        fix(problem)
    fix(config.params)
    if config.backend.get("transcript_dir"):
        config.backend["transcript_dir"] = str((base / config.backend["transcript_dir"]).resolve())


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate; relative instance/transcript paths resolve against the file's folder."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    config = parse_config_text(text)
    _resolve_paths(config, path.parent)
    return config
