"""Exact tabular solver for small enumerable constrained games.

Used as ground truth for the learners: joint-MDP enumeration, value
iteration on the Lagrangian cost, exact policy evaluation per channel, the
dual function ``g(lambda)``, its gradient via the envelope theorem, and dual
maximisation.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

TIE_TOL = 1e-9


class NotEnumerable(TypeError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class TabularGame:
    """Enumerated joint MDP with sparse successor lists.

    ``successors[s, a, m]`` is the m-th possible next state with probability
    ``probs[s, a, m]`` (padding entries have probability 0). Terminal states
    self-loop with zero cost and penalty.
    """

    successors: np.ndarray  # (S, A, M) int
    probs: np.ndarray  # (S, A, M)
    cost: np.ndarray  # (S, A)
    penalties: np.ndarray  # (K, S, A)
    terminal: np.ndarray  # (S,) bool
    initial: np.ndarray  # (S,)
    gamma: float
    thresholds: np.ndarray  # (K,)
    radices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        S, A, _ = self.successors.shape
        if self.probs.shape != self.successors.shape or self.cost.shape != (S, A):
            raise ValueError("transition and cost tensors disagree in shape")
        if self.penalties.shape[1:] != (S, A) or self.thresholds.shape != (self.penalties.shape[0],):
            raise ValueError("penalty tensors or thresholds have the wrong shape")
        if ((self.successors < 0) | (self.successors >= S)).any():
            raise ValueError("transition target outside the state space")
        if not np.allclose(self.probs.sum(axis=-1), 1.0, atol=1e-12):
            raise ValueError("transition probabilities must sum to 1")
        if abs(self.initial.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def state_count(self) -> int:
        return self.successors.shape[0]

    @property
    def joint_action_count(self) -> int:
        return self.successors.shape[1]

    @property
    def k(self) -> int:
        return self.penalties.shape[0]

    def channel(self, which: Union[str, int]) -> np.ndarray:
        """Single-stage reward table: ``"cost"``, ``"penalty_j"`` or the integer j."""
        if which == "cost":
            return self.cost
        if isinstance(which, str) and which.startswith("penalty_"):
            which = int(which.split("_", 1)[1])
        if isinstance(which, (int, np.integer)) and 0 <= which < self.k:
            return self.penalties[which]
        raise KeyError(f"unknown channel {which!r}")

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """E[V(s') | s, a] as an (S, A) table."""
        return (self.probs * values[self.successors]).sum(axis=-1)

    def save(self, path: Union[str, Path]) -> None:
        header = {
            "format": "tabular_game", "version": 1, "gamma": self.gamma,
            "thresholds": self.thresholds.tolist(), "radices": list(self.radices),
            "shapes": {name: list(getattr(self, name).shape) for name in _TENSORS},
        }
        arrays = {name: np.ascontiguousarray(getattr(self, name)) for name in _TENSORS}
        with open(path, "wb") as fh:
            np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TabularGame":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["__header__"]).decode())
            if header.get("format") != "tabular_game":
                raise ValueError("not a tabular game dump")
            arrays = {name: data[name] for name in _TENSORS}
        return cls(**arrays, gamma=header["gamma"], thresholds=np.asarray(header["thresholds"], dtype=np.float64),
                   radices=tuple(header["radices"]))


_TENSORS = ("successors", "probs", "cost", "penalties", "terminal", "initial")


def enumerate_joint(env, gamma: float | None = None) -> TabularGame:
    """Materialise an enumerable environment as a time-homogeneous tabular game.

    The episode step cap is not part of the result; use :func:`fold_horizon`
    to add it.
    """
    for hook in ("enum_states", "enum_index", "enum_transitions", "enum_initial", "enum_absorbing"):
        if not hasattr(env, hook):
            raise NotEnumerable(f"{type(env).__name__} has no finite state enumeration")
    spec = env.spec
    states = env.enum_states()
    S = len(states)
    radices = tuple(spec.action_count_per_agent)
    joint = list(itertools.product(*(range(n) for n in radices)))
    A, K = len(joint), spec.k_penalties
    rows: list[list[list[tuple[float, int]]]] = []
    cost = np.zeros((S, A))
    pens = np.zeros((K, S, A))
    terminal = np.zeros(S, dtype=bool)
    width = 1
    for s_idx, state in enumerate(states):
        if env.enum_index(state) != s_idx:
            raise ValueError("enum_index disagrees with enum_states order")
        row = []
        if env.enum_absorbing(state):
            terminal[s_idx] = True
            row = [[(1.0, s_idx)] for _ in joint]
        else:
            for a_idx, acts in enumerate(joint):
                outcomes = env.enum_transitions(state, acts)
                cost[s_idx, a_idx] = outcomes[0][2]
                pens[:, s_idx, a_idx] = outcomes[0][3]
                row.append([(p, env.enum_index(nxt)) for p, nxt, _, _ in outcomes])
                width = max(width, len(outcomes))
        rows.append(row)
    succ = np.zeros((S, A, width), dtype=np.int64)
    probs = np.zeros((S, A, width))
    for s_idx, row in enumerate(rows):
        for a_idx, outs in enumerate(row):
            for m, (p, nxt) in enumerate(outs):
                succ[s_idx, a_idx, m] = nxt
                probs[s_idx, a_idx, m] = p
            succ[s_idx, a_idx, len(outs):] = succ[s_idx, a_idx, 0]
    return TabularGame(succ, probs, cost, pens, terminal, np.asarray(env.enum_initial(), dtype=np.float64),
                       spec.gamma if gamma is None else gamma, np.asarray(spec.thresholds, dtype=np.float64), radices)


def fold_horizon(tab: TabularGame, horizon: int, gamma: float | None = None) -> TabularGame:
    """Append a steps-remaining counter so episodes end after ``horizon`` moves.

    Folded state ``k * S + s`` is base state ``s`` with ``k`` moves left;
    every ``k = 0`` state is terminal. The result is acyclic apart from
    terminal self-loops, so value iteration is exact within ``horizon + 1``
    sweeps even for ``gamma = 1``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    S, A, M = tab.successors.shape
    H = horizon
    succ = np.empty(((H + 1) * S, A, M), dtype=np.int64)
    probs = np.empty_like(succ, dtype=np.float64)
    cost = np.zeros(((H + 1) * S, A))
    pens = np.zeros((tab.k, (H + 1) * S, A))
    terminal = np.zeros((H + 1) * S, dtype=bool)
    self_loop = np.broadcast_to(np.arange(S)[:, None, None], (S, A, M))
    loop_probs = np.zeros((S, A, M))
    loop_probs[:, :, 0] = 1.0
    for k in range(H + 1):
        blk = slice(k * S, (k + 1) * S)
        if k == 0:
            succ[blk] = self_loop
            probs[blk] = loop_probs
            terminal[blk] = True
            continue
        done = tab.terminal
        succ[blk] = np.where(done[:, None, None], self_loop, tab.successors) + (k - 1) * S
        succ[blk][done] = self_loop[done] + k * S
        probs[blk] = np.where(done[:, None, None], loop_probs, tab.probs)
        cost[blk] = tab.cost * ~done[:, None]
        pens[:, blk] = tab.penalties * ~done[None, :, None]
        terminal[blk] = done
    initial = np.zeros((H + 1) * S)
    initial[H * S:] = tab.initial
    return TabularGame(succ, probs, cost, pens, terminal, initial,
                       tab.gamma if gamma is None else gamma, tab.thresholds.copy(), tab.radices)


def unfold_state(index: int, base_states: int) -> tuple[int, int]:
    """Folded index -> (base state, moves remaining)."""
    k, s = divmod(index, base_states)
    return s, k


# -- policies and evaluation -------------------------------------------------------

def check_policy(tab: TabularGame, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (tab.state_count, tab.joint_action_count):
        raise ValueError(f"policy shape {policy.shape} does not match the game")
    if (policy < 0).any() or not np.allclose(policy.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("policy rows must be probability vectors")
    return policy


def greedy_from_q(q: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Deterministic policy picking the lowest index among (near-)minimal actions."""
    best = q.min(axis=1, keepdims=True)
    choice = np.argmax(q <= best + tie_tol * np.maximum(1.0, np.abs(best)), axis=1)
    policy = np.zeros_like(q)
    policy[np.arange(q.shape[0]), choice] = 1.0
    return policy


def lagrangian_cost(tab: TabularGame, lam: Sequence[float]) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64).reshape(tab.k)
    return tab.cost + np.tensordot(lam, tab.penalties, axes=1) if tab.k else tab.cost.copy()


def _sweeps(tab: TabularGame, tol: float, max_iter: int | None) -> int:
    if max_iter is not None:
        return max_iter
    return 100_000 if tab.gamma < 1.0 else 10 * tab.state_count + 10


def bellman_operator(tab: TabularGame, values: np.ndarray, lam: Sequence[float] = ()) -> np.ndarray:
    """One synchronous Bellman optimality sweep for the cost ``C + lambda . P``."""
    lam = np.zeros(tab.k) if len(lam) == 0 else np.asarray(lam, dtype=np.float64)
    return (lagrangian_cost(tab, lam) + tab.gamma * tab.expected_next(values)).min(axis=1)


def value_iteration(tab: TabularGame, lam: Sequence[float] = (), tol: float = 1e-10,
                    max_iter: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bellman-optimal values and greedy policy for the cost ``C + lambda . P``."""
    lam = np.zeros(tab.k) if len(lam) == 0 else np.asarray(lam, dtype=np.float64)
    r = lagrangian_cost(tab, lam)
    v = np.zeros(tab.state_count)
    for _ in range(_sweeps(tab, tol, max_iter)):
        q = r + tab.gamma * tab.expected_next(v)
        v_new = q.min(axis=1)
        residual = np.max(np.abs(v_new - v))
        v = v_new
        if residual < tol:
            q = r + tab.gamma * tab.expected_next(v)
            return v, greedy_from_q(q)
    raise ConvergenceError(f"value iteration did not reach tolerance {tol}")


def policy_eval(tab: TabularGame, policy: np.ndarray, channel: Union[str, int] = "cost", tol: float = 1e-10,
                gamma: float | None = None, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Values of ``policy`` on one channel and their initial-distribution average."""
    policy = check_policy(tab, policy)
    g = tab.gamma if gamma is None else gamma
    r_pi = (policy * tab.channel(channel)).sum(axis=1)
    v = np.zeros(tab.state_count)
    for _ in range(_sweeps(tab, tol, max_iter)):
        v_new = r_pi + g * (policy * tab.expected_next(v)).sum(axis=1)
        residual = np.max(np.abs(v_new - v))
        v = v_new
        if residual < tol:
            return v, float(tab.initial @ v)
    raise ConvergenceError(f"policy evaluation did not reach tolerance {tol}")


def lagrangian_value(tab: TabularGame, policy: np.ndarray, lam: Sequence[float]) -> float:
    """L(pi, lambda) = J_C(pi) + sum_j lambda_j (J_Pj(pi) - alpha_j)."""
    lam = np.asarray(lam, dtype=np.float64).reshape(tab.k)
    total = policy_eval(tab, policy, "cost")[1]
    for j in range(tab.k):
        total += lam[j] * (policy_eval(tab, policy, j)[1] - tab.thresholds[j])
    return total


# -- dual --------------------------------------------------------------------------

def dual_value(tab: TabularGame, lam: Sequence[float]) -> float:
    lam = np.asarray(lam, dtype=np.float64).reshape(tab.k)
    if (lam < 0).any():
        raise ValueError("multipliers must be non-negative")
    v, _ = value_iteration(tab, lam)
    return float(tab.initial @ v - lam @ tab.thresholds)


def envelope_gradient(tab: TabularGame, lam: Sequence[float]) -> np.ndarray:
    """dg/dlambda_j = J_Pj(q(lambda)) - alpha_j, evaluated under the greedy policy at lambda."""
    lam = np.asarray(lam, dtype=np.float64).reshape(tab.k)
    if (lam < 0).any():
        raise ValueError("multipliers must be non-negative")
    _, policy = value_iteration(tab, lam)
    return np.array([policy_eval(tab, policy, j)[1] - tab.thresholds[j] for j in range(tab.k)])


def is_kink(tab: TabularGame, lam: Sequence[float], h: float = 1e-4) -> bool:
    """True when the greedy policy changes anywhere within +-h of ``lam``."""
    lam = np.asarray(lam, dtype=np.float64).reshape(tab.k)
    _, base = value_iteration(tab, lam)
    for j in range(tab.k):
        for sign in (-1.0, 1.0):
            probe = lam.copy()
            probe[j] = max(0.0, probe[j] + sign * h)
            if not np.array_equal(value_iteration(tab, probe)[1], base):
                return True
    return False


@dataclass
class DualSolution:
    lam: np.ndarray
    value: float
    policy: np.ndarray
    grid: np.ndarray  # (N, K) evaluated multipliers
    grid_values: np.ndarray  # (N,)


def dual_maximize(tab: TabularGame, lambda_max: float, grid_points: int = 21, refine_rounds: int = 20) -> DualSolution:
    """Grid search over [0, lambda_max]^K, then shrink-by-half local refinement.

    Concavity of g makes the best grid point's neighbourhood contain the
    maximiser, so halving the probe offset around the incumbent converges.
    """
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    axis = np.linspace(0.0, lambda_max, grid_points)
    grid = np.array(list(itertools.product(axis, repeat=tab.k))) if tab.k else np.zeros((1, 0))
    values = np.array([dual_value(tab, lam) for lam in grid])
    best_i = int(np.argmax(values))
    best, best_val = grid[best_i].copy(), float(values[best_i])
    offset = axis[1] - axis[0] if grid_points > 1 else lambda_max
    for _ in range(refine_rounds):
        offset /= 2.0
        for j in range(tab.k):
            for sign in (-1.0, 1.0):
                probe = best.copy()
                probe[j] = float(np.clip(probe[j] + sign * offset, 0.0, lambda_max))
                val = dual_value(tab, probe)
                if val > best_val:
                    best, best_val = probe, val
    _, policy = value_iteration(tab, best)
    return DualSolution(best, best_val, policy, grid, values)


def policy_from_fn(env, tab: TabularGame, probs_fn: Callable, horizon: int | None = None) -> np.ndarray:
    """Tabulate a stationary joint policy ``probs_fn(per_agent_obs, global_obs)`` over a game.

    Pass ``horizon`` when ``tab`` was produced by :func:`fold_horizon`; the
    same row is used for every moves-remaining layer.
    """
    states = env.enum_states()
    base = np.zeros((len(states), int(np.prod(tab.radices))))
    for i, state in enumerate(states):
        per_agent, glob = env.observe(state)
        base[i] = probs_fn(per_agent, glob)
    if horizon is None:
        return base
    return np.tile(base, (horizon + 1, 1))
