from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

UP, DOWN, LEFT, RIGHT, STAY = 0, 1, 2, 3, 4
ACTION_NAMES = ("up", "down", "left", "right", "stay")


class TerminalStateError(RuntimeError):
    """Raised when stepping an episode that has already ended."""


@dataclass(frozen=True)
class GameSpec:
    env_id: str
    n_agents: int
    action_count_per_agent: tuple[int, ...]
    obs_dim_per_agent: tuple[int, ...]
    global_obs_dim: int
    k_penalties: int
    max_steps: int
    thresholds: tuple[float, ...]
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if len(self.action_count_per_agent) != self.n_agents or len(self.obs_dim_per_agent) != self.n_agents:
            raise ValueError("per-agent sizes must have one entry per agent")
        if any(a < 1 for a in self.action_count_per_agent):
            raise ValueError("every agent needs at least one action")
        if self.k_penalties < 0 or self.max_steps < 1:
            raise ValueError("k_penalties must be >= 0 and max_steps >= 1")
        if len(self.thresholds) != self.k_penalties:
            raise ValueError(f"expected {self.k_penalties} thresholds, got {len(self.thresholds)}")
        if any(a < 0 for a in self.thresholds):
            raise ValueError("thresholds must be non-negative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def joint_action_count(self) -> int:
        return int(np.prod(self.action_count_per_agent))

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["action_count_per_agent"] = list(self.action_count_per_agent)
        d["obs_dim_per_agent"] = list(self.obs_dim_per_agent)
        d["thresholds"] = list(self.thresholds)
        return d


@dataclass
class StepOutcome:
    next_state: Any
    per_agent_obs: list[np.ndarray]
    global_obs: np.ndarray
    cost: float
    penalties: np.ndarray
    terminal: bool
    info: dict = field(default_factory=dict)


class Environment(Protocol):
    spec: GameSpec

    def reset(self, rng: np.random.Generator) -> Any: ...

    def step(self, state: Any, actions: Sequence[int], rng: np.random.Generator | None = None) -> StepOutcome: ...

    def observe(self, state: Any) -> tuple[list[np.ndarray], np.ndarray]: ...

    def is_terminal(self, state: Any) -> bool: ...


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def grid_move(cell: int, action: int, width: int, height: int) -> int:
    """Move one cell on a row-major grid (y grows upward); walls are no-ops."""
    x, y = cell % width, cell // width
    if action == UP and y + 1 < height:
        y += 1
    elif action == DOWN and y > 0:
        y -= 1
    elif action == LEFT and x > 0:
        x -= 1
    elif action == RIGHT and x + 1 < width:
        x += 1
    return y * width + x


def check_actions(actions: Sequence[int], counts: Sequence[int]) -> tuple[int, ...]:
    acts = tuple(int(a) for a in actions)
    if len(acts) != len(counts):
        raise ValueError(f"expected {len(counts)} actions, got {len(acts)}")
    for a, n in zip(acts, counts):
        if not 0 <= a < n:
            raise ValueError(f"action {a} out of range [0, {n})")
    return acts
