"""Constrained cooperative navigation in the unit square.

Two agents move in fixed increments toward randomly placed landmarks. The
team cost is the sum, over landmarks, of the distance to the closest agent;
a step on which the agents are closer than the collision radius carries a
penalty of 1.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .base import DOWN, LEFT, RIGHT, STAY, UP, GameSpec, StepOutcome, TerminalStateError, check_actions

N_AGENTS = 2
MOVES = {
    UP: np.array([0.0, 1.0]),
    DOWN: np.array([0.0, -1.0]),
    LEFT: np.array([-1.0, 0.0]),
    RIGHT: np.array([1.0, 0.0]),
    STAY: np.array([0.0, 0.0]),
}


class NavState(NamedTuple):
    agents: np.ndarray  # (2, 2)
    landmarks: np.ndarray  # (L, 2)
    steps: int = 0


def nav_cost(agents: np.ndarray, landmarks: np.ndarray) -> float:
    d = np.linalg.norm(landmarks[:, None, :] - agents[None, :, :], axis=-1)
    return float(d.min(axis=1).sum())


def nav_reset(rng, n_landmarks: int = 2) -> NavState:
    agents = np.asarray(rng.random((N_AGENTS, 2)), dtype=np.float64)
    landmarks = np.asarray(rng.random((n_landmarks, 2)), dtype=np.float64)
    return NavState(agents, landmarks, 0)


class CooperativeNavigation:
    env_id = "nav"

    def __init__(
        self,
        alpha: Sequence[float] = (0.1,),
        gamma: float = 0.99,
        n_landmarks: int = 2,
        step_size: float = 0.1,
        collision_radius: float = 0.1,
        reach_threshold: float = 2.0,
        max_steps: int = 30,
    ):
        self.n_landmarks = n_landmarks
        self.step_size = step_size
        self.collision_radius = collision_radius
        self.reach_threshold = reach_threshold
        obs_dim = 4 + 2 * n_landmarks
        self.spec = GameSpec(
            env_id=self.env_id,
            n_agents=N_AGENTS,
            action_count_per_agent=(5, 5),
            obs_dim_per_agent=(obs_dim, obs_dim),
            global_obs_dim=2 * obs_dim,
            k_penalties=1,
            max_steps=max_steps,
            thresholds=tuple(float(a) for a in alpha),
            gamma=gamma,
        )

    def options(self) -> dict:
        return {
            "n_landmarks": self.n_landmarks,
            "step_size": self.step_size,
            "collision_radius": self.collision_radius,
            "reach_threshold": self.reach_threshold,
            "max_steps": self.spec.max_steps,
        }

    def reset(self, rng) -> NavState:
        return nav_reset(rng, self.n_landmarks)

    def observe(self, state: NavState) -> tuple[list[np.ndarray], np.ndarray]:
        per_agent = []
        for i in range(N_AGENTS):
            own = state.agents[i]
            other = state.agents[1 - i]
            per_agent.append(np.concatenate([own, other - own, (state.landmarks - own).ravel()]))
        return per_agent, np.concatenate(per_agent)

    def cost(self, state: NavState) -> float:
        return nav_cost(state.agents, state.landmarks)

    def is_terminal(self, state: NavState) -> bool:
        if state.steps >= self.spec.max_steps:
            return True
        # a freshly reset state is never terminal: the reach test applies after a move
        return state.steps > 0 and self.cost(state) < self.reach_threshold

    def step(self, state: NavState, actions: Sequence[int], rng=None) -> StepOutcome:
        if self.is_terminal(state):
            raise TerminalStateError(f"episode already ended after {state.steps} steps")
        acts = check_actions(actions, self.spec.action_count_per_agent)
        moves = np.stack([MOVES[a] for a in acts])
        agents = np.clip(state.agents + self.step_size * moves, 0.0, 1.0)
        cost = nav_cost(agents, state.landmarks)
        gap = float(np.linalg.norm(agents[0] - agents[1]))
        penalty = 1.0 if gap < self.collision_radius else 0.0
        nxt = NavState(agents, state.landmarks, state.steps + 1)
        per_agent, glob = self.observe(nxt)
        terminal = cost < self.reach_threshold or nxt.steps >= self.spec.max_steps
        return StepOutcome(nxt, per_agent, glob, cost, np.array([penalty]), terminal)
