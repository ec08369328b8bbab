"""JAL, Independent and Centralized nested actor-critic trainers.

All three share one episode loop; they differ only in how learners are wired:

* ``jal``          one learner, critics and a single joint actor read the global observation
* ``centralized``  one learner, critics read the global observation, one actor per agent
* ``independent``  one full learner per agent, each reading only its own observation
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import NestedACState, TwoTimescaleSchedule
from .envs import Environment, GameSpec
from .neural import (
    DenseNet,
    NonFiniteError,
    load_archive,
    net_arrays,
    net_from_arrays,
    net_init,
    predict,
    sample_policy,
    save_archive,
    softmax,
)

ALGORITHMS = ("jal", "independent", "centralized")


class FlaggedRunError(RuntimeError):
    """A training run hit a non-finite value and was stopped."""

    def __init__(self, episode: int, reason: str):
        super().__init__(f"numerical failure in episode {episode}: {reason}")
        self.episode = episode
        self.reason = reason


class ActionSpaceTooLarge(ValueError):
    pass


@dataclass
class TrainConfig:
    episodes: int = 10_000
    schedule: TwoTimescaleSchedule = field(default_factory=TwoTimescaleSchedule)
    critic_hidden: tuple[int, ...] = (64, 64)
    actor_hidden: tuple[int, ...] = (64, 64)
    lambda_init: float = 0.0
    max_joint_actions: int = 1024
    constrained: bool = True


def encode_joint(actions: Sequence[int], radices: Sequence[int]) -> int:
    idx = 0
    for a, r in zip(actions, radices):
        idx = idx * r + int(a)
    return idx


def decode_joint(index: int, radices: Sequence[int]) -> tuple[int, ...]:
    out = []
    for r in reversed(radices):
        index, a = divmod(index, r)
        out.append(a)
    if index:
        raise ValueError("joint index out of range")
    return tuple(reversed(out))


# -- run log -----------------------------------------------------------------

@dataclass
class EpisodeRecord:
    episode: int
    cost: float
    penalties: np.ndarray
    lambdas: np.ndarray
    mean_abs_td: float
    steps: int


@dataclass
class RunLog:
    header: dict
    records: list[EpisodeRecord] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.header["spec"]["k_penalties"])

    def columns(self) -> list[str]:
        k = self.k
        return (["episode", "undiscounted_cost"] + [f"undiscounted_penalty_{j}" for j in range(k)]
                + [f"lambda_{j}" for j in range(k)] + ["mean_abs_td", "steps"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for rec in self.records:
            w.writerow([rec.episode, repr(rec.cost), *map(repr, map(float, rec.penalties)),
                        *map(repr, map(float, rec.lambdas)), repr(rec.mean_abs_td), rec.steps])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# "):
            raise ValueError("run log is missing its JSON header line")
        log = cls(json.loads(lines[0][2:]))
        k = log.k
        rows = csv.reader(lines[1:])
        next(rows)
        for row in rows:
            vals = [float(v) for v in row]
            log.records.append(EpisodeRecord(
                int(vals[0]), vals[1], np.array(vals[2:2 + k]), np.array(vals[2 + k:2 + 2 * k]),
                vals[2 + 2 * k], int(vals[3 + 2 * k])))
        return log

    @classmethod
    def read(cls, path: str | Path) -> "RunLog":
        return cls.from_csv(Path(path).read_text())

    def array(self, name: str) -> np.ndarray:
        if name == "cost":
            return np.array([r.cost for r in self.records])
        if name == "penalties":
            return np.array([r.penalties for r in self.records]).reshape(len(self.records), self.k)
        if name == "lambdas":
            return np.array([r.lambdas for r in self.records]).reshape(len(self.records), self.k)
        if name == "steps":
            return np.array([r.steps for r in self.records])
        raise KeyError(name)


# -- trained model -----------------------------------------------------------

@dataclass
class TrainedModel:
    kind: str
    actors: list[DenseNet]
    lagrange: np.ndarray  # (learners, K)
    spec: GameSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = 1 if self.kind == "jal" else self.spec.n_agents
        if len(self.actors) != expected:
            raise ValueError(f"{self.kind} model needs {expected} actor(s), got {len(self.actors)}")

    def act(self, per_agent_obs: Sequence[np.ndarray], global_obs: np.ndarray, rng) -> tuple[int, ...]:
        if self.kind == "jal":
            return decode_joint(sample_policy(self.actors[0], global_obs, rng.random()), self.spec.action_count_per_agent)
        return tuple(sample_policy(net, obs, rng.random()) for net, obs in zip(self.actors, per_agent_obs))

    def action_probs(self, per_agent_obs: Sequence[np.ndarray], global_obs: np.ndarray) -> np.ndarray:
        """Joint action distribution (mixed-radix order) at one state."""
        radices = self.spec.action_count_per_agent
        if self.kind == "jal":
            return softmax(predict(self.actors[0], global_obs))
        joint = np.ones(1)
        for net, obs in zip(self.actors, per_agent_obs):
            joint = np.outer(joint, softmax(predict(net, obs))).ravel()
        assert joint.shape[0] == int(np.prod(radices))
        return joint

    def save(self, path) -> None:
        arrays: dict[str, np.ndarray] = {"lagrange": self.lagrange}
        for i, net in enumerate(self.actors):
            arrays.update(net_arrays(net, prefix=f"actor{i}_"))
        meta = {"kind": "trained_model", "algorithm": self.kind, "spec": self.spec.to_json(), "meta": self.meta}
        save_archive(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        arrays, meta = load_archive(path)
        if meta.get("kind") != "trained_model":
            raise ValueError("not a trained-model checkpoint")
        spec_d = dict(meta["spec"])
        spec = GameSpec(**{**spec_d,
                           "action_count_per_agent": tuple(spec_d["action_count_per_agent"]),
                           "obs_dim_per_agent": tuple(spec_d["obs_dim_per_agent"]),
                           "thresholds": tuple(spec_d["thresholds"])})
        n = 1 if meta["algorithm"] == "jal" else spec.n_agents
        actors = [net_from_arrays(arrays, prefix=f"actor{i}_") for i in range(n)]
        return cls(meta["algorithm"], actors, np.array(arrays["lagrange"]), spec, meta.get("meta", {}))


# -- training ------------------------------------------------------------------

@dataclass
class _Learner:
    state: NestedACState
    critic_view: Callable[[list, np.ndarray], np.ndarray]
    actor_views: list[Callable[[list, np.ndarray], np.ndarray]]


def _global(per_agent, glob):
    return glob


def _agent(i):
    return lambda per_agent, glob: per_agent[i]


def _build_learners(kind: str, spec: GameSpec, config: TrainConfig, rng) -> list[_Learner]:
    k = spec.k_penalties
    alpha = np.asarray(spec.thresholds, dtype=np.float64)
    lam0 = np.full(k, float(config.lambda_init))

    def make(critic_in: int, actor_shapes: list[tuple[int, int]], critic_view, actor_views) -> _Learner:
        critic = net_init([critic_in, *config.critic_hidden, 1], rng)
        penalty = [net_init([critic_in, *config.critic_hidden, 1], rng) for _ in range(k)]
        actors = [net_init([n_in, *config.actor_hidden, n_out], rng) for n_in, n_out in actor_shapes]
        state = NestedACState(actors, critic, penalty, lam0.copy(), alpha.copy(), config.schedule, spec.gamma)
        return _Learner(state, critic_view, actor_views)

    if kind == "jal":
        joint = spec.joint_action_count
        if joint > config.max_joint_actions:
            raise ActionSpaceTooLarge(f"joint action space {joint} exceeds cap {config.max_joint_actions}")
        return [make(spec.global_obs_dim, [(spec.global_obs_dim, joint)], _global, [_global])]
    if kind == "centralized":
        shapes = list(zip(spec.obs_dim_per_agent, spec.action_count_per_agent))
        return [make(spec.global_obs_dim, shapes, _global, [_agent(i) for i in range(spec.n_agents)])]
    if kind == "independent":
        return [make(spec.obs_dim_per_agent[i], [(spec.obs_dim_per_agent[i], spec.action_count_per_agent[i])],
                     _agent(i), [_agent(i)])
                for i in range(spec.n_agents)]
    raise ValueError(f"unknown algorithm {kind!r}; choose from {ALGORITHMS}")


UpdateHook = Callable[[int, int, NestedACState, float], None]


def train(kind: str, env: Environment, config: TrainConfig, rng: np.random.Generator,
          hook: Optional[UpdateHook] = None) -> tuple[TrainedModel, RunLog]:
    """Run ``config.episodes`` episodes of nested actor-critic training.

    ``rng`` is split into three child streams (initialisation, environment,
    action sampling) so the draws of one never shift the others. ``hook``, if
    given, is called after every learner update as
    ``hook(global_step, learner_index, state, delta)``.
    """
    spec = env.spec
    init_rng, env_rng, act_rng = rng.spawn(3)
    learners = _build_learners(kind, spec, config, init_rng)
    radices = spec.action_count_per_agent
    k = spec.k_penalties
    log = RunLog({"algorithm": kind, "spec": spec.to_json(), "env_options": getattr(env, "options", dict)(),
                  "episodes": config.episodes})
    step_count = 0
    for episode in range(config.episodes):
        state = env.reset(env_rng)
        per_agent, glob = env.observe(state)
        total_cost, total_pen, abs_td, n = 0.0, np.zeros(k), 0.0, 0
        try:
            while not env.is_terminal(state):
                chosen: list[list[int]] = []
                actions: list[int] = []
                for ln in learners:
                    picks = []
                    for actor, view in zip(ln.state.policy_actors, ln.actor_views):
                        picks.append(sample_policy(actor, view(per_agent, glob), act_rng.random()))
                    chosen.append(picks)
                    actions.extend(decode_joint(picks[0], radices) if kind == "jal" else picks)
                out = env.step(state, actions, env_rng)
                for idx, (ln, picks) in enumerate(zip(learners, chosen)):
                    delta = ln.state.update(
                        ln.critic_view(per_agent, glob),
                        ln.critic_view(out.per_agent_obs, out.global_obs),
                        [view(per_agent, glob) for view in ln.actor_views],
                        picks, out.cost, out.penalties, out.terminal, update_lagrange=config.constrained,
                    )
                    abs_td += abs(delta) / len(learners)
                    if hook is not None:
                        hook(step_count, idx, ln.state, delta)
                step_count += 1
                total_cost += out.cost
                total_pen += out.penalties
                n += 1
                state, per_agent, glob = out.next_state, out.per_agent_obs, out.global_obs
        except (NonFiniteError, FloatingPointError) as exc:
            raise FlaggedRunError(episode, str(exc)) from exc
        lambdas = np.mean([ln.state.lagrange for ln in learners], axis=0) if k else np.zeros(0)
        if not np.isfinite(total_cost) or not all(l.state.policy_critic.is_finite() for l in learners):
            raise FlaggedRunError(episode, "non-finite cost or critic parameters")
        log.records.append(EpisodeRecord(episode, float(total_cost), total_pen.copy(), lambdas,
                                         abs_td / n if n else 0.0, n))
    model = TrainedModel(
        kind,
        [actor.copy() for ln in learners for actor in ln.state.policy_actors],
        np.array([ln.state.lagrange for ln in learners]).reshape(len(learners), k),
        spec,
        {"episodes": config.episodes, "env_options": log.header["env_options"], "steps": step_count},
    )
    return model, log


def train_centralized(env, config, rng, hook=None):
    return train("centralized", env, config, rng, hook)


def train_jal(env, config, rng, hook=None):
    return train("jal", env, config, rng, hook)


def train_independent(env, config, rng, hook=None):
    return train("independent", env, config, rng, hook)


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    expected_cost: float
    expected_penalty: np.ndarray
    episodes: int
    cost_std: float = 0.0
    penalty_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.expected_penalty = np.asarray(self.expected_penalty, dtype=np.float64)
        self.penalty_std = np.asarray(self.penalty_std, dtype=np.float64)
        if self.episodes < 1:
            raise ValueError("an evaluation report needs at least one episode")

    def penalty_stderr(self) -> np.ndarray:
        return self.penalty_std / math.sqrt(self.episodes)


def evaluate(model: TrainedModel, env: Environment, n_episodes: int, rng: np.random.Generator) -> EvalReport:
    """Mean undiscounted episode cost and penalties when sampling from the frozen actors."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env_rng, act_rng = rng.spawn(2)
    k = env.spec.k_penalties
    costs = np.zeros(n_episodes)
    pens = np.zeros((n_episodes, k))
    for ep in range(n_episodes):
        state = env.reset(env_rng)
        per_agent, glob = env.observe(state)
        while not env.is_terminal(state):
            out = env.step(state, model.act(per_agent, glob, act_rng), env_rng)
            costs[ep] += out.cost
            pens[ep] += out.penalties
            state, per_agent, glob = out.next_state, out.per_agent_obs, out.global_obs
    return EvalReport(float(costs.mean()), pens.mean(axis=0), n_episodes, float(costs.std()), pens.std(axis=0))


def median_over_runs(reports: Sequence[EvalReport]) -> EvalReport:
    if not reports:
        raise ValueError("median of an empty list of reports")
    return EvalReport(
        float(np.median([r.expected_cost for r in reports])),
        np.median(np.stack([r.expected_penalty for r in reports]), axis=0),
        int(np.median([r.episodes for r in reports])),
        float(np.median([r.cost_std for r in reports])),
        np.median(np.stack([r.penalty_std for r in reports]), axis=0),
    )
