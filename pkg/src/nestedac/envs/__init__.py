"""Constrained cooperative games sharing one step/observe contract."""
from __future__ import annotations

from typing import Sequence

from .base import ACTION_NAMES, DOWN, LEFT, RIGHT, STAY, UP, Environment, GameSpec, StepOutcome, TerminalStateError
from .coin import CoinGame, CoinGameState, coin_reset
from .grid import GridWorld, GridWorldState, grid_reset
from .nav import CooperativeNavigation, NavState, nav_reset

ENVIRONMENTS = {
    "grid": GridWorld,
    "coin": CoinGame,
    "nav": CooperativeNavigation,
}


def make_env(env_id: str, alpha: Sequence[float] | None = None, gamma: float = 0.99, **options) -> Environment:
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise ValueError(f"unknown environment {env_id!r}; choose from {sorted(ENVIRONMENTS)}") from None
    kwargs = dict(options)
    if alpha is not None:
        kwargs["alpha"] = tuple(alpha)
    return cls(gamma=gamma, **kwargs)


__all__ = [
    "ACTION_NAMES", "UP", "DOWN", "LEFT", "RIGHT", "STAY",
    "Environment", "GameSpec", "StepOutcome", "TerminalStateError",
    "GridWorld", "GridWorldState", "grid_reset",
    "CoinGame", "CoinGameState", "coin_reset",
    "CooperativeNavigation", "NavState", "nav_reset",
    "ENVIRONMENTS", "make_env",
]
