"""Constrained 4x4 grid world with two agents and a shared target.

Cell ``c`` sits at ``x = c % 4, y = c // 4`` with ``y`` growing upward::

    12 13 14 15
     8  9 10 11
     4  5  6  7
     0  1  2  3

An agent on the target (11) stays there. Each step costs one unit per agent
still away from the target; co-occupying a non-target cell after a move
costs one unit of penalty.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .base import GameSpec, StepOutcome, TerminalStateError, check_actions, grid_move, one_hot

WIDTH = HEIGHT = 4
N_CELLS = WIDTH * HEIGHT
TARGET = 11
HORIZON = 10
START_MODES = ("independent", "shared")


class GridWorldState(NamedTuple):
    pos1: int
    pos2: int
    steps: int = 0


def grid_reset(rng, start_mode: str = "independent") -> GridWorldState:
    """Independent mode draws each agent's cell uniformly; shared mode puts both on one uniform cell."""
    if start_mode == "independent":
        return GridWorldState(int(rng.integers(N_CELLS)), int(rng.integers(N_CELLS)), 0)
    if start_mode == "shared":
        c = int(rng.integers(N_CELLS))
        return GridWorldState(c, c, 0)
    raise ValueError(f"unknown start_mode {start_mode!r}")


def grid_transition(pos1: int, pos2: int, actions: Sequence[int]) -> tuple[int, int, float, float]:
    """One joint move without the step counter: (next1, next2, cost, overlap penalty)."""
    n1 = pos1 if pos1 == TARGET else grid_move(pos1, actions[0], WIDTH, HEIGHT)
    n2 = pos2 if pos2 == TARGET else grid_move(pos2, actions[1], WIDTH, HEIGHT)
    cost = float((n1 != TARGET) + (n2 != TARGET))
    penalty = 1.0 if (n1 == n2 and n1 != TARGET) else 0.0
    return n1, n2, cost, penalty


def grid_terminal(state: GridWorldState, horizon: int = HORIZON) -> bool:
    return (state.pos1 == TARGET and state.pos2 == TARGET) or state.steps >= horizon


class GridWorld:
    env_id = "grid"

    def __init__(
        self,
        alpha: Sequence[float] = (0.1,),
        gamma: float = 0.99,
        start_mode: str = "independent",
        observe_other: bool = True,
    ):
        if start_mode not in START_MODES:
            raise ValueError(f"start_mode must be one of {START_MODES}")
        self.start_mode = start_mode
        self.observe_other = observe_other
        obs_dim = 2 * N_CELLS if observe_other else N_CELLS
        self.spec = GameSpec(
            env_id=self.env_id,
            n_agents=2,
            action_count_per_agent=(4, 4),
            obs_dim_per_agent=(obs_dim, obs_dim),
            global_obs_dim=2 * N_CELLS,
            k_penalties=1,
            max_steps=HORIZON,
            thresholds=tuple(float(a) for a in alpha),
            gamma=gamma,
        )

    def options(self) -> dict:
        return {"start_mode": self.start_mode, "observe_other": self.observe_other}

    def reset(self, rng) -> GridWorldState:
        return grid_reset(rng, self.start_mode)

    def observe(self, state: GridWorldState) -> tuple[list[np.ndarray], np.ndarray]:
        a = one_hot(state.pos1, N_CELLS)
        b = one_hot(state.pos2, N_CELLS)
        if self.observe_other:
            per_agent = [np.concatenate([a, b]), np.concatenate([b, a])]
        else:
            per_agent = [a, b]
        return per_agent, np.concatenate([a, b])

    def is_terminal(self, state: GridWorldState) -> bool:
        return grid_terminal(state)

    def step(self, state: GridWorldState, actions: Sequence[int], rng=None) -> StepOutcome:
        if grid_terminal(state):
            raise TerminalStateError(f"episode already ended at {state}")
        acts = check_actions(actions, self.spec.action_count_per_agent)
        n1, n2, cost, penalty = grid_transition(state.pos1, state.pos2, acts)
        nxt = GridWorldState(n1, n2, state.steps + 1)
        per_agent, glob = self.observe(nxt)
        return StepOutcome(nxt, per_agent, glob, cost, np.array([penalty]), grid_terminal(nxt))

    # -- enumeration hooks used by the tabular oracle --

    def enum_states(self) -> list[GridWorldState]:
        return [GridWorldState(p1, p2, 0) for p1 in range(N_CELLS) for p2 in range(N_CELLS)]

    def enum_index(self, state: GridWorldState) -> int:
        return state.pos1 * N_CELLS + state.pos2

    def enum_absorbing(self, state: GridWorldState) -> bool:
        return state.pos1 == TARGET and state.pos2 == TARGET

    def enum_transitions(self, state: GridWorldState, actions: Sequence[int]):
        n1, n2, cost, penalty = grid_transition(state.pos1, state.pos2, actions)
        return [(1.0, GridWorldState(n1, n2, 0), cost, np.array([penalty]))]

    def enum_initial(self) -> np.ndarray:
        d = np.zeros(N_CELLS * N_CELLS)
        if self.start_mode == "independent":
            d[:] = 1.0 / d.size
        else:
            d[[c * N_CELLS + c for c in range(N_CELLS)]] = 1.0 / N_CELLS
        return d
