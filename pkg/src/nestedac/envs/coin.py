"""Constrained two-colour coin game on a 3x3 grid.

Agent 0 is blue, agent 1 is red. Picking up any coin earns cost -1; picking
up a coin of the other colour adds a penalty of 1 for the team. A fresh coin
appears immediately on a free cell.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .base import GameSpec, StepOutcome, TerminalStateError, check_actions, grid_move

SIDE = 3
N_CELLS = SIDE * SIDE
BLUE, RED = 0, 1
DEFAULT_HORIZON = 20


class CoinGameState(NamedTuple):
    pos_blue: int
    pos_red: int
    coin_pos: int
    coin_color: int
    steps: int = 0


def free_cells(pos_blue: int, pos_red: int) -> list[int]:
    return [c for c in range(N_CELLS) if c != pos_blue and c != pos_red]


def spawn_coin(rng, pos_blue: int, pos_red: int) -> tuple[int, int]:
    free = free_cells(pos_blue, pos_red)
    cell = free[int(rng.integers(len(free)))]
    return cell, int(rng.integers(2))


def coin_reset(rng) -> CoinGameState:
    blue = int(rng.integers(N_CELLS))
    red = int(rng.integers(N_CELLS))
    cell, color = spawn_coin(rng, blue, red)
    return CoinGameState(blue, red, cell, color, 0)


def coin_move(state: CoinGameState, actions: Sequence[int]) -> tuple[int, int, float, float, bool]:
    """Agent moves and collection outcome: (blue, red, cost, penalty, collected)."""
    blue = grid_move(state.pos_blue, actions[0], SIDE, SIDE)
    red = grid_move(state.pos_red, actions[1], SIDE, SIDE)
    collectors = [col for col, pos in ((BLUE, blue), (RED, red)) if pos == state.coin_pos]
    if not collectors:
        return blue, red, 0.0, 0.0, False
    penalty = 1.0 if any(col != state.coin_color for col in collectors) else 0.0
    return blue, red, -1.0, penalty, True


class CoinGame:
    env_id = "coin"

    def __init__(self, alpha: Sequence[float] = (0.2,), gamma: float = 0.99, max_steps: int = DEFAULT_HORIZON):
        self.spec = GameSpec(
            env_id=self.env_id,
            n_agents=2,
            action_count_per_agent=(4, 4),
            obs_dim_per_agent=(4 * N_CELLS, 4 * N_CELLS),
            global_obs_dim=4 * N_CELLS,
            k_penalties=1,
            max_steps=max_steps,
            thresholds=tuple(float(a) for a in alpha),
            gamma=gamma,
        )

    def options(self) -> dict:
        return {"max_steps": self.spec.max_steps}

    def reset(self, rng) -> CoinGameState:
        return coin_reset(rng)

    def observe(self, state: CoinGameState) -> tuple[list[np.ndarray], np.ndarray]:
        planes = np.zeros((4, N_CELLS))
        planes[0, state.pos_blue] = 1.0
        planes[1, state.pos_red] = 1.0
        planes[2 + state.coin_color, state.coin_pos] = 1.0
        flat = planes.ravel()
        return [flat, flat.copy()], flat

    def is_terminal(self, state: CoinGameState) -> bool:
        return state.steps >= self.spec.max_steps

    def step(self, state: CoinGameState, actions: Sequence[int], rng=None) -> StepOutcome:
        if self.is_terminal(state):
            raise TerminalStateError(f"episode already ended at {state}")
        acts = check_actions(actions, self.spec.action_count_per_agent)
        blue, red, cost, penalty, collected = coin_move(state, acts)
        coin, color = state.coin_pos, state.coin_color
        if collected:
            if rng is None:
                raise ValueError("coin respawn needs a random source")
            coin, color = spawn_coin(rng, blue, red)
        nxt = CoinGameState(blue, red, coin, color, state.steps + 1)
        per_agent, glob = self.observe(nxt)
        return StepOutcome(nxt, per_agent, glob, cost, np.array([penalty]), self.is_terminal(nxt),
                           {"collected": collected})

    # -- enumeration hooks --

    def enum_states(self) -> list[CoinGameState]:
        return [CoinGameState(b, r, c, col, 0)
                for b in range(N_CELLS) for r in range(N_CELLS) for c in range(N_CELLS) for col in (BLUE, RED)]

    def enum_index(self, state: CoinGameState) -> int:
        return ((state.pos_blue * N_CELLS + state.pos_red) * N_CELLS + state.coin_pos) * 2 + state.coin_color

    def enum_absorbing(self, state: CoinGameState) -> bool:
        return False

    def enum_transitions(self, state: CoinGameState, actions: Sequence[int]):
        blue, red, cost, penalty, collected = coin_move(state, actions)
        pen = np.array([penalty])
        if not collected:
            return [(1.0, CoinGameState(blue, red, state.coin_pos, state.coin_color, 0), cost, pen)]
        free = free_cells(blue, red)
        p = 1.0 / (2 * len(free))
        return [(p, CoinGameState(blue, red, c, col, 0), cost, pen) for c in free for col in (BLUE, RED)]

    def enum_initial(self) -> np.ndarray:
        d = np.zeros(N_CELLS ** 3 * 2)
        for b in range(N_CELLS):
            for r in range(N_CELLS):
                free = free_cells(b, r)
                for c in free:
                    for col in (BLUE, RED):
                        d[self.enum_index(CoinGameState(b, r, c, col))] = 1.0 / (N_CELLS * N_CELLS * len(free) * 2)
        return d
