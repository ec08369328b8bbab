"""Nested actor-critic building blocks.

The inner actor-critic minimises the Lagrangian cost ``C + lambda . P`` for the
current multipliers; the outer (penalty) critic evaluates each penalty channel
and the penalty actor moves ``lambda`` by projected ascent. Three step-size
sequences keep the critic fastest, the policy actor in the middle and the
multipliers slowest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neural import DenseNet, NonFiniteError, actor_update, sample_policy, td_update


@dataclass(frozen=True)
class StepSequence:
    """``base / (1 + t / horizon) ** exponent``."""

    base: float
    exponent: float
    horizon: float

    def __call__(self, t: int) -> float:
        return self.base / (1.0 + t / self.horizon) ** self.exponent


@dataclass(frozen=True)
class TwoTimescaleSchedule:
    critic: StepSequence = StepSequence(0.003, 0.55, 1e5)
    actor: StepSequence = StepSequence(0.002, 0.7, 1e5)
    lagrange: StepSequence = StepSequence(0.002, 0.9, 1e4)

    def __post_init__(self) -> None:
        seqs = (self.critic, self.actor, self.lagrange)
        for name, seq in zip(("critic", "actor", "lagrange"), seqs):
            if not 0.5 < seq.exponent <= 1.0:
                raise ValueError(f"{name} exponent {seq.exponent} outside (0.5, 1]")
            if seq.base <= 0 or seq.horizon <= 0:
                raise ValueError(f"{name} base and horizon must be positive")
        # these make lagrange <= actor <= critic hold for every t and keep the ratios non-increasing
        for fast, slow, label in ((self.critic, self.actor, "actor/critic"), (self.actor, self.lagrange, "lagrange/actor")):
            if slow.base > fast.base or slow.exponent < fast.exponent or slow.horizon > fast.horizon:
                raise ValueError(f"{label}: slower sequence must have base <=, exponent >= and horizon <= the faster one")

    def steps(self, t: int) -> tuple[float, float, float]:
        return self.critic(t), self.actor(t), self.lagrange(t)

    def ratio_decay(self, T: float) -> float:
        """(lagrange/actor at T) relative to the same ratio at t = 0."""
        return (self.lagrange(T) / self.actor(T)) / (self.lagrange(0) / self.actor(0))


def modified_cost(cost: float, penalties: np.ndarray, lam: np.ndarray) -> float:
    penalties = np.asarray(penalties, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if penalties.shape != lam.shape:
        raise ValueError(f"{penalties.shape[0]} penalties but {lam.shape[0]} multipliers")
    return float(cost + penalties @ lam) if lam.size else float(cost)


def td_error(r: float, v_curr: float, v_next: float, gamma: float, terminal: bool) -> float:
    return r + (0.0 if terminal else gamma * v_next) - v_curr


def critic_step(
    net: DenseNet, obs: np.ndarray, next_obs: np.ndarray, r: float, terminal: bool, gamma: float, step: float
) -> tuple[float, float]:
    """Semi-gradient TD(0) descent on the squared residual, bootstrap target held fixed.

    The parameter change is ``-step * d(delta**2)/d theta = 2 * step * delta * grad V(obs)``.
    Returns ``(delta, V(obs))``, both measured before the update.
    """
    return td_update(net, obs, next_obs, r, terminal, gamma, step)


def policy_critic_step(critic, obs, next_obs, r, terminal, gamma, step) -> float:
    return critic_step(critic, obs, next_obs, r, terminal, gamma, step)[0]


def penalty_critic_step(penalty_net, obs, next_obs, p_j, terminal, gamma, step) -> tuple[float, float]:
    return critic_step(penalty_net, obs, next_obs, p_j, terminal, gamma, step)


def policy_actor_step(actor: DenseNet, obs: np.ndarray, action: int, delta: float, step: float) -> None:
    """``theta -= step * delta * grad log pi(action | obs)``; positive delta makes the action rarer."""
    if delta != 0.0:
        actor_update(actor, obs, action, delta, step)


def lagrange_step(lam: np.ndarray, v_penalty: np.ndarray, alpha: np.ndarray, step: float) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    out = np.maximum(0.0, lam + step * (np.asarray(v_penalty, dtype=np.float64) - np.asarray(alpha, dtype=np.float64)))
    if (out < 0).any() or not np.isfinite(out).all():
        raise NonFiniteError(f"invalid multiplier update {out}")
    return out


def sample_from(probs: np.ndarray, rng) -> int:
    """Inverse-CDF draw using a single uniform from ``rng``."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.shape[0] - 1)


def sample_action(actor: DenseNet, obs: np.ndarray, rng) -> int:
    return sample_policy(actor, obs, rng.random())


@dataclass
class NestedACState:
    """One learner: policy actor(s), the two kinds of critic and its multipliers."""

    policy_actors: list[DenseNet]
    policy_critic: DenseNet
    penalty_critics: list[DenseNet]
    lagrange: np.ndarray
    thresholds: np.ndarray
    schedule: TwoTimescaleSchedule = field(default_factory=TwoTimescaleSchedule)
    gamma: float = 0.99
    t: int = 0

    def __post_init__(self) -> None:
        self.lagrange = np.asarray(self.lagrange, dtype=np.float64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        k = len(self.penalty_critics)
        if self.lagrange.shape != (k,) or self.thresholds.shape != (k,):
            raise ValueError("need one multiplier and one threshold per penalty critic")
        if (self.lagrange < 0).any():
            raise ValueError("multipliers must start non-negative")

    @property
    def k(self) -> int:
        return len(self.penalty_critics)

    def update(
        self,
        critic_obs: np.ndarray,
        next_critic_obs: np.ndarray,
        actor_obs: list[np.ndarray],
        actions: list[int],
        cost: float,
        penalties: np.ndarray,
        terminal: bool,
        update_lagrange: bool = True,
    ) -> float:
        """Apply all four update rules for one transition and return the policy TD error."""
        c_step, a_step, l_step = self.schedule.steps(self.t)
        r = modified_cost(cost, penalties, self.lagrange)
        delta = policy_critic_step(self.policy_critic, critic_obs, next_critic_obs, r, terminal, self.gamma, c_step)
        v_pen = np.empty(self.k)
        for j, net in enumerate(self.penalty_critics):
            _, v_pen[j] = penalty_critic_step(net, critic_obs, next_critic_obs, penalties[j], terminal, self.gamma, c_step)
        for actor, obs, a in zip(self.policy_actors, actor_obs, actions):
            policy_actor_step(actor, obs, a, delta, a_step)
        if update_lagrange and self.k:
            self.lagrange = lagrange_step(self.lagrange, v_pen, self.thresholds, l_step)
        self.t += 1
        return delta
