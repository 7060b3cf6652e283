from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml
from dotenv import load_dotenv

from app import texts

__all__ = [
    "APP_VERSION",
    "ConfigError",
    "SolverRewardParams",
    "ProposerRewardParams",
    "KlSettings",
    "WordsConfig",
    "WorldConfig",
    "BackendConfig",
    "TrainerConfig",
    "LoadedConfig",
    "LOG_LEVEL",
    "DEFAULT_CONFIG_PATH",
    "env_str",
    "env_int",
    "env_float",
    "apply_override",
    "config_to_dict",
    "load_config",
    "trainer_config",
]

APP_VERSION = "0.3.0"

_DEFAULT_BASE_DIR = Path(__file__).resolve().parents[1]

SOLVER_REWARD_MODES = ("continuous", "discrete")
PROPOSER_REWARD_MODES = ("continuous", "discrete")
SOLVER_UPDATE_MODES = ("mean", "sequential")
PROPOSER_UPDATE_MODES = ("mean", "latest")
WORD_MODEL_KINDS = ("constant", "uniform")


load_dotenv()


class ConfigError(ValueError):
    """Raised when a configuration value is missing, malformed or out of range."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"{key}: {message}")


def env_str(name: str, default: str | None = None) -> str | None:
    """Return the value of an environment variable as a string."""

    value = os.getenv(name)
    if value is None:
        return default

    stripped = value.strip()
    if stripped == "" and default is not None:
        return default
    return stripped if stripped else value


def _env_number(name: str, default: Any, parse: Callable[[str], Any], kind: str) -> Any:
    value = env_str(name)
    if value is None or value == "":
        return default
    try:
        return parse(value)
    except ValueError as exc:
        raise ConfigError(name, f"environment variable must be {kind}, got {value!r}") from exc


def env_int(name: str, default: int | None = None) -> int | None:
    return _env_number(name, default, int, "an integer")


def env_float(name: str, default: float | None = None) -> float | None:
    return _env_number(name, default, float, "a number")



LOG_LEVEL: str = (env_str("EVOLVE_LOG_LEVEL", "INFO") or "INFO").upper()
DEFAULT_CONFIG_PATH: Path = _DEFAULT_BASE_DIR / "config" / "default.yaml"


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(key, message)


@dataclass(frozen=True)
class SolverRewardParams:
    """Continuous solver reward knobs: softness, length penalty and brevity target."""

    gamma: float = 0.7
    lambda_len: float = 0.10
    tau_words: int = 6
    floor_at_zero: bool = True

    def __post_init__(self) -> None:
        _require(0.0 < self.gamma <= 1.0, "solver_params.gamma", "must lie in (0, 1]")
        _require(self.lambda_len >= 0.0, "solver_params.lambda_len", "must be non-negative")
        _require(self.tau_words >= 1, "solver_params.tau_words", "must be at least 1")


@dataclass(frozen=True)
class ProposerRewardParams:
    """Band-pass proposer reward: Gaussian in the solver-consensus entropy."""

    mu_h: float = 0.90
    sigma_h: float = 0.35
    entropy_base: float = math.e

    def __post_init__(self) -> None:
        _require(self.mu_h >= 0.0, "proposer_params.mu_h", "must be non-negative")
        _require(self.sigma_h > 0.0, "proposer_params.sigma_h", "must be positive")
        _require(
            self.entropy_base > 0.0 and self.entropy_base != 1.0,
            "proposer_params.entropy_base",
            "must be positive and different from 1",
        )


@dataclass(frozen=True)
class KlSettings:
    """Seed values of one role's adaptive KL controller."""

    beta: float = 0.05
    eta: float = 0.1
    target: float = 0.05
    beta_min: float = 1e-4
    beta_max: float = 10.0

    def __post_init__(self) -> None:
        _require(self.beta_min > 0.0, "kl.beta_min", "must be positive")
        _require(self.beta_min < self.beta_max, "kl.beta_max", "must exceed beta_min")
        _require(self.beta_min <= self.beta <= self.beta_max, "kl.beta", "must lie inside [beta_min, beta_max]")
        _require(self.eta > 0.0, "kl.eta", "must be positive")
        _require(self.target > 0.0, "kl.target", "must be positive")


@dataclass(frozen=True)
class WordsConfig:
    """Distribution of the number of words a simulated answer writes before its answer tag."""

    kind: str = "constant"
    value: int = 3
    low: int = 1
    high: int = 12

    def __post_init__(self) -> None:
        _require(self.kind in WORD_MODEL_KINDS, "world.words.kind", f"must be one of {WORD_MODEL_KINDS}")
        _require(self.value >= 0, "world.words.value", "must be non-negative")
        _require(0 <= self.low <= self.high, "world.words.high", "needs 0 <= low <= high")


@dataclass(frozen=True)
class WorldConfig:
    n_bins: int = 8
    bin_difficulty: tuple[float, ...] | None = None
    difficulty_span: float = 4.0
    n_distractors: int = 3
    solver_skill: float = 0.0
    words: WordsConfig = field(default_factory=WordsConfig)

    def __post_init__(self) -> None:
        _require(self.n_bins >= 1, "world.n_bins", "must be at least 1")
        _require(self.n_distractors >= 1, "world.n_distractors", "must be at least 1")
        _require(self.difficulty_span >= 0.0, "world.difficulty_span", "must be non-negative")
        if self.bin_difficulty is not None:
            values = tuple(float(v) for v in self.bin_difficulty)
            object.__setattr__(self, "bin_difficulty", values)
            _require(len(values) == self.n_bins, "world.bin_difficulty", "needs exactly n_bins values")
            _require(
                all(b > a for a, b in zip(values, values[1:])),
                "world.bin_difficulty",
                "must be strictly increasing",
            )


@dataclass(frozen=True)
class BackendConfig:
    """Remote chat-completions endpoint used for inference-only scoring rounds."""

    base_url: str = "http://127.0.0.1:8000/v1"
    model_name: str = "local-model"
    api_key_env: str = "EVOLVE_API_KEY"
    api_key: str | None = field(default=None, repr=False, compare=False)
    n_answers: int = 5
    solver_temperature: float = 1.0
    proposer_temperature: float = 1.0
    request_timeout: float = 60.0
    max_retries: int = 2
    retry_backoff: float = 0.5
    max_concurrency: int = 5
    max_tokens: int = 512
    proposer_prompt_template: str = texts.PROPOSER_PROMPT
    solver_prompt_template: str = texts.SOLVER_PROMPT
    fixtures: str | None = None
    record_fixtures: str | None = None

    def __post_init__(self) -> None:
        _require(bool(self.base_url), "backend.base_url", "must be non-empty")
        _require(bool(self.model_name), "backend.model_name", "must be non-empty")
        _require(self.n_answers >= 2, "backend.n_answers", "must be at least 2")
        _require(self.solver_temperature > 0.0, "backend.solver_temperature", "must be positive")
        _require(self.proposer_temperature > 0.0, "backend.proposer_temperature", "must be positive")
        _require(self.request_timeout > 0.0, "backend.request_timeout", "must be positive")
        _require(0 <= self.max_retries <= 10, "backend.max_retries", "must lie in [0, 10]")
        _require(self.retry_backoff >= 0.0, "backend.retry_backoff", "must be non-negative")
        _require(self.max_concurrency >= 1, "backend.max_concurrency", "must be at least 1")
        _require(self.max_tokens >= 1, "backend.max_tokens", "must be at least 1")


@dataclass(frozen=True)
class TrainerConfig:
    """Everything a simulator run needs; key names are the config-file key names."""

    n_answers: int = 5
    proposer_period: int = 5
    steps: int = 6000
    learning_rate_solver: float = 1e-2
    learning_rate_proposer: float = 1e-2
    grad_clip_norm: float = 1.0
    baseline_decay: float = 0.9
    seed: int = 0
    solver_reward: str = "continuous"
    proposer_reward: str = "continuous"
    solver_update: str = "mean"
    proposer_update: str = "mean"
    proposer_init_scale: float = 0.0
    log_every: int = 1000
    solver_params: SolverRewardParams = field(default_factory=SolverRewardParams)
    proposer_params: ProposerRewardParams = field(default_factory=ProposerRewardParams)
    kl_solver: KlSettings = field(default_factory=KlSettings)
    kl_proposer: KlSettings = field(default_factory=lambda: KlSettings(target=0.5))
    world: WorldConfig = field(default_factory=WorldConfig)

    def __post_init__(self) -> None:
        _require(self.n_answers >= 1, "n_answers", "must be at least 1")
        _require(self.proposer_period >= 1, "proposer_period", "must be at least 1")
        _require(self.steps >= 0, "steps", "must be non-negative")
        _require(self.learning_rate_solver >= 0.0, "learning_rate_solver", "must be non-negative")
        _require(self.learning_rate_proposer >= 0.0, "learning_rate_proposer", "must be non-negative")
        _require(self.grad_clip_norm > 0.0, "grad_clip_norm", "must be positive")
        _require(0.0 <= self.baseline_decay < 1.0, "baseline_decay", "must lie in [0, 1)")
        _require(self.solver_reward in SOLVER_REWARD_MODES, "solver_reward", f"must be one of {SOLVER_REWARD_MODES}")
        _require(
            self.proposer_reward in PROPOSER_REWARD_MODES,
            "proposer_reward",
            f"must be one of {PROPOSER_REWARD_MODES}",
        )
        _require(self.solver_update in SOLVER_UPDATE_MODES, "solver_update", f"must be one of {SOLVER_UPDATE_MODES}")
        _require(
            self.proposer_update in PROPOSER_UPDATE_MODES,
            "proposer_update",
            f"must be one of {PROPOSER_UPDATE_MODES}",
        )
        _require(self.proposer_init_scale >= 0.0, "proposer_init_scale", "must be non-negative")
        _require(self.log_every >= 1, "log_every", "must be at least 1")


@dataclass(frozen=True)
class LoadedConfig:
    """Parsed run configuration plus the snapshot recorded in run manifests."""

    trainer: TrainerConfig
    backend: BackendConfig
    snapshot: dict[str, Any]


_NESTED: dict[type, dict[str, type]] = {
    TrainerConfig: {
        "solver_params": SolverRewardParams,
        "proposer_params": ProposerRewardParams,
        "kl_solver": KlSettings,
        "kl_proposer": KlSettings,
        "world": WorldConfig,
    },
    WorldConfig: {"words": WordsConfig},
}
_SECRET_FIELDS = {"api_key"}


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Coerce a YAML scalar to the type of the field's default value."""

    if isinstance(default, bool):
        _require(isinstance(value, bool), key, "must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        _require(isinstance(value, int) and not isinstance(value, bool), key, "must be an integer")
        return value
    if isinstance(default, float):
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), key, "must be a number")
        return float(value)
    if isinstance(default, str):
        _require(isinstance(value, str), key, "must be a string")
        return value
    if isinstance(value, list):
        return tuple(value)
    return value


def _build(cls: type, data: Mapping[str, Any] | None, prefix: str) -> Any:
    data = dict(data or {})
    known = {f.name: f for f in fields(cls) if f.name not in _SECRET_FIELDS}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")

    defaults = cls()
    nested = _NESTED.get(cls, {})
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        key = f"{prefix}{name}"
        if name in nested:
            _require(value is None or isinstance(value, Mapping), key, "must be a mapping")
            kwargs[name] = _build(nested[name], value, f"{key}.")
        elif value is None:
            kwargs[name] = None
        else:
            kwargs[name] = _coerce(key, value, getattr(defaults, name))
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if prefix and not exc.key.startswith(prefix):
            raise ConfigError(f"{prefix}{exc.key.split('.')[-1]}", str(exc).split(": ", 1)[-1]) from exc
        raise


def _parse_scalar(raw: str) -> Any:
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def apply_override(data: dict[str, Any], override: str) -> dict[str, Any]:
    """Apply one ``a.b.c=VALUE`` override to a nested mapping in place."""

    key, sep, raw = override.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(override, "override must look like KEY=VALUE")
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigError(key, "cannot override inside a scalar value")
        node = child
    node[parts[-1]] = _parse_scalar(raw.strip())
    return data


def config_to_dict(trainer: TrainerConfig, backend: BackendConfig) -> dict[str, Any]:
    """Return the effective configuration as plain data (secrets excluded)."""

    def _plain(obj: Any) -> Any:
        if is_dataclass(obj):
            return {
                f.name: _plain(getattr(obj, f.name))
                for f in fields(obj)
                if f.name not in _SECRET_FIELDS
            }
        if isinstance(obj, tuple):
            return [_plain(v) for v in obj]
        return obj

    snapshot = _plain(trainer)
    snapshot["backend"] = _plain(backend)
    return snapshot


def _read_yaml(path: Path) -> dict[str, Any]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    *,
    data: Mapping[str, Any] | None = None,
) -> LoadedConfig:
    """Load a run configuration from YAML, apply overrides in order and validate it.

    ``data`` can be passed instead of a path (tests, manifests). Environment
    variables fill the backend URL, model name, timeout, retry count and API key when the file does
    not set them.
    """
    load_dotenv()

    raw: dict[str, Any] = _read_yaml(Path(path)) if path is not None else {}
    if data is not None:
        raw = _deep_merge(raw, dict(data))
    for override in overrides:
        apply_override(raw, override)

    backend_raw = raw.pop("backend", None) or {}
    if not isinstance(backend_raw, dict):
        raise ConfigError("backend", "must be a mapping")
    backend_raw = dict(backend_raw)
    backend_raw.setdefault("base_url", env_str("EVOLVE_BACKEND_URL", BackendConfig.base_url))
    backend_raw.setdefault("model_name", env_str("EVOLVE_BACKEND_MODEL", BackendConfig.model_name))
    backend_raw.setdefault(
        "request_timeout", env_float("EVOLVE_BACKEND_TIMEOUT", BackendConfig.request_timeout)
    )
    backend_raw.setdefault("max_retries", env_int("EVOLVE_BACKEND_MAX_RETRIES", BackendConfig.max_retries))

    trainer = _build(TrainerConfig, raw, "")
    backend = _build(BackendConfig, backend_raw, "backend.")
    backend = replace(backend, api_key=env_str(backend.api_key_env))
    return LoadedConfig(trainer=trainer, backend=backend, snapshot=config_to_dict(trainer, backend))


def _deep_merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def trainer_config(**changes: Any) -> TrainerConfig:
    """Shorthand used by tests and notebooks: defaults with selected fields replaced."""

    return replace(TrainerConfig(), **changes)
