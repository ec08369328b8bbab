"""Declarative experiment description in a ``key = value`` text format.

Example::

    # grid world sweep
    env = grid
    algorithm = jal, independent, centralized
    alpha = 0.1, 0.3, 0.5
    episodes = 10000
    env.start_mode = shared

Blank lines and ``#`` comments are ignored. List-valued keys take
comma-separated values. Keys of the form ``env.<name>`` are passed to the
environment constructor.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .core import StepSequence, TwoTimescaleSchedule
from .envs import ENVIRONMENTS, make_env
from .trainers import ALGORITHMS, TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key and 1-based line (0 when not from text)."""

    def __init__(self, key: str, message: str, line: int = 0):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{key}: {message}")
        self.key = key
        self.line = line


_DEFAULT_SCHEDULE = TwoTimescaleSchedule()


@dataclass
class ExperimentConfig:
    env: str = "grid"
    algorithms: tuple[str, ...] = ("centralized",)
    alphas: tuple[float, ...] = (0.1,)
    episodes: int = 10_000
    eval_episodes: int = 10_000
    runs: int = 10
    seed: int = 0
    gamma: float = 0.99
    critic_base: float = _DEFAULT_SCHEDULE.critic.base
    critic_exponent: float = _DEFAULT_SCHEDULE.critic.exponent
    critic_horizon: float = _DEFAULT_SCHEDULE.critic.horizon
    actor_base: float = _DEFAULT_SCHEDULE.actor.base
    actor_exponent: float = _DEFAULT_SCHEDULE.actor.exponent
    actor_horizon: float = _DEFAULT_SCHEDULE.actor.horizon
    lagrange_base: float = _DEFAULT_SCHEDULE.lagrange.base
    lagrange_exponent: float = _DEFAULT_SCHEDULE.lagrange.exponent
    lagrange_horizon: float = _DEFAULT_SCHEDULE.lagrange.horizon
    lambda_init: float = 0.0
    critic_hidden: tuple[int, ...] = (64, 64)
    actor_hidden: tuple[int, ...] = (64, 64)
    workers: int = 1
    out: str = "results"
    env_options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.env not in ENVIRONMENTS:
            raise ConfigError("env", f"unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        if not self.algorithms:
            raise ConfigError("algorithm", "at least one algorithm is required")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise ConfigError("algorithm", f"unknown algorithm {algo!r}; choose from {list(ALGORITHMS)}")
        if not self.alphas:
            raise ConfigError("alpha", "at least one threshold is required")
        if any(a < 0 for a in self.alphas):
            raise ConfigError("alpha", "thresholds must be >= 0")
        for key in ("episodes", "eval_episodes", "runs", "workers"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma", "must lie in (0, 1]")
        if self.lambda_init < 0:
            raise ConfigError("lambda_init", "multipliers must start non-negative")
        for key in ("critic_hidden", "actor_hidden"):
            if any(h < 1 for h in getattr(self, key)):
                raise ConfigError(key, "layer widths must be >= 1")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError("schedule", str(exc)) from None
        try:
            make_env(self.env, (self.alphas[0],), self.gamma, **self.env_options)
        except (TypeError, ValueError) as exc:
            raise ConfigError("env", f"rejected options {self.env_options}: {exc}") from None

    def schedule(self) -> TwoTimescaleSchedule:
        return TwoTimescaleSchedule(
            StepSequence(self.critic_base, self.critic_exponent, self.critic_horizon),
            StepSequence(self.actor_base, self.actor_exponent, self.actor_horizon),
            StepSequence(self.lagrange_base, self.lagrange_exponent, self.lagrange_horizon),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            episodes=self.episodes, schedule=self.schedule(), critic_hidden=self.critic_hidden,
            actor_hidden=self.actor_hidden, lambda_init=self.lambda_init,
        )

    def make_env(self, alpha: float):
        return make_env(self.env, (alpha,), self.gamma, **self.env_options)

    def with_updates(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


# config key -> dataclass field, for keys whose text name differs
_ALIASES = {"algorithm": "algorithms", "alpha": "alphas"}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key: str, name: str, raw: str, line: int) -> Any:
    kind = _FIELD_TYPES[name]
    items = [v.strip() for v in raw.split(",") if v.strip()]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "tuple[str, ...]":
            return tuple(items)
        if kind == "tuple[float, ...]":
            return tuple(float(v) for v in items)
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in items)
    except ValueError:
        raise ConfigError(key, f"cannot read {raw!r} as {kind}", line) from None
    raise ConfigError(key, "not settable from text", line)


def _literal(raw: str) -> Any:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse a ``key = value`` document; absent keys take their defaults."""
    values: dict[str, Any] = {}
    env_options: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for number, original in enumerate(text.splitlines(), start=1):
        line = original.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected 'key = value'", number)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in lines:
            raise ConfigError(key, f"duplicate key (first set on line {lines[key]})", number)
        lines[key] = number
        if key.startswith("env."):
            env_options[key[4:]] = _literal(raw)
            continue
        name = _ALIASES.get(key, key)
        if name not in _FIELD_TYPES or name == "env_options":
            raise ConfigError(key, "unknown key", number)
        values[name] = _convert(key, name, raw, number)
    try:
        return ExperimentConfig(**values, env_options=env_options)
    except ConfigError as exc:
        text_key = {v: k for k, v in _ALIASES.items()}.get(exc.key, exc.key)
        line = lines.get(text_key, 0)
        if exc.key == "schedule":
            line = min((n for k, n in lines.items() if k.split("_")[0] in ("critic", "actor", "lagrange")), default=0)
        elif exc.key == "env" and env_options:
            line = min(n for k, n in lines.items() if k.startswith("env."))
        raise ConfigError(text_key, str(exc).split(": ", 1)[1], line) from None


def serialize_config(config: ExperimentConfig) -> str:
    """Text form that :func:`parse_config` reads back to an equal config."""
    out = []
    for f in fields(ExperimentConfig):
        if f.name == "env_options":
            continue
        key = {v: k for k, v in _ALIASES.items()}.get(f.name, f.name)
        value = getattr(config, f.name)
        text = ", ".join(map(repr if f.type == "tuple[float, ...]" else str, value)) if isinstance(value, tuple) else (
            repr(value) if isinstance(value, float) else str(value))
        out.append(f"{key} = {text}")
    for name, value in sorted(config.env_options.items()):
        out.append(f"env.{name} = {value!r}" if isinstance(value, str) else f"env.{name} = {value}")
    return "\n".join(out) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
