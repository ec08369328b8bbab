import numpy as np
import pytest

from nestedac.core import StepSequence, TwoTimescaleSchedule
from nestedac.envs import GridWorld
from nestedac.neural import DenseNet, net_bytes
from nestedac.trainers import (
    ActionSpaceTooLarge, EvalReport, FlaggedRunError, RunLog, TrainConfig, TrainedModel, decode_joint,
    encode_joint, evaluate, median_over_runs, train, train_centralized, train_independent, train_jal,
)
from toys import Corridor

SMALL = TrainConfig(episodes=30, critic_hidden=(8,), actor_hidden=(8,))


def test_joint_encoding():
    assert decode_joint(13, (4, 4)) == (3, 1)
    assert encode_joint((3, 1), (4, 4)) == 13
    for idx in range(60):
        assert encode_joint(decode_joint(idx, (3, 4, 5)), (3, 4, 5)) == idx
    with pytest.raises(ValueError):
        decode_joint(16, (4, 4))


def test_actor_counts_per_algorithm():
    env = GridWorld()
    rng = np.random.default_rng(0)
    jal, _ = train_jal(env, TrainConfig(episodes=2, critic_hidden=(8,), actor_hidden=(8,)), rng)
    assert len(jal.actors) == 1 and jal.actors[0].n_outputs == 16
    cen, _ = train_centralized(env, TrainConfig(episodes=2, critic_hidden=(8,), actor_hidden=(8,)), rng)
    assert len(cen.actors) == 2 and all(a.n_outputs == 4 for a in cen.actors)
    ind, _ = train_independent(env, TrainConfig(episodes=2, critic_hidden=(8,), actor_hidden=(8,)), rng)
    assert len(ind.actors) == 2 and ind.lagrange.shape == (2, 1)


def test_action_cap():
    with pytest.raises(ActionSpaceTooLarge):
        train("jal", GridWorld(), TrainConfig(episodes=1, max_joint_actions=8), np.random.default_rng(0))


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        train("greedy", GridWorld(), SMALL, np.random.default_rng(0))


@pytest.mark.parametrize("kind", ["jal", "centralized", "independent"])
def test_determinism_and_log_shape(kind):
    env = GridWorld(start_mode="shared")
    m1, log1 = train(kind, env, SMALL, np.random.default_rng(42))
    m2, log2 = train(kind, env, SMALL, np.random.default_rng(42))
    assert log1.to_csv() == log2.to_csv()
    assert all(net_bytes(a) == net_bytes(b) for a, b in zip(m1.actors, m2.actors))
    assert len(log1.records) == SMALL.episodes
    assert np.all(log1.array("lambdas") >= 0)
    assert log1.columns() == ["episode", "undiscounted_cost", "undiscounted_penalty_0", "lambda_0",
                              "mean_abs_td", "steps"]


def test_run_log_csv_roundtrip(tmp_path):
    _, log = train("centralized", GridWorld(), SMALL, np.random.default_rng(1))
    log.write(tmp_path / "run.csv")
    back = RunLog.read(tmp_path / "run.csv")
    assert back.to_csv() == log.to_csv()
    assert back.header["spec"]["env_id"] == "grid"


def test_lambda_nonnegative_on_every_update():
    seen = []

    def hook(step, idx, state, delta):
        seen.append(state.lagrange.copy())
        assert np.all(state.lagrange >= 0)

    train("independent", GridWorld(alpha=(0.0,), start_mode="shared"), SMALL, np.random.default_rng(3), hook)
    assert len(seen) > 0


def test_independent_learners_are_isolated():
    """Agents own disjoint parameter buffers; perturbing one never moves the other."""
    from nestedac.trainers import _build_learners
    env = GridWorld()
    learners = _build_learners("independent", env.spec, SMALL, np.random.default_rng(5))
    nets = [[ln.state.policy_critic, *ln.state.penalty_critics, *ln.state.policy_actors] for ln in learners]
    for a in nets[0]:
        for b in nets[1]:
            assert not np.shares_memory(a.params, b.params)
    snapshot = [n.params.copy() for n in nets[1]]
    for n in nets[0]:
        n.params[:] += 1.0
    per, glob = env.observe(env.reset(np.random.default_rng(0)))
    learners[0].state.update(per[0], per[0], [per[0]], [1], 2.0, np.array([1.0]), False)
    assert all(np.array_equal(s, n.params) for s, n in zip(snapshot, nets[1]))
    # each agent's critic reads only its own observation
    assert learners[1].critic_view(per, glob) is per[1]


def test_single_agent_degeneracy():
    env = Corridor()
    cfg = TrainConfig(episodes=40, critic_hidden=(6,), actor_hidden=(6,))
    traces = {}
    for kind in ("jal", "centralized", "independent"):
        rec = []
        train(kind, env, cfg, np.random.default_rng(9),
              lambda step, idx, st, delta: rec.append((delta, st.policy_critic.params.tobytes(),
                                                       st.policy_actors[0].params.tobytes(), st.lagrange.tobytes())))
        traces[kind] = rec
    assert traces["jal"] == traces["centralized"] == traces["independent"]


def test_flagged_run_on_non_finite():
    env = Corridor()
    sch = TwoTimescaleSchedule(StepSequence(1e6, 0.55, 1e5), StepSequence(1e6, 0.7, 1e5), StepSequence(1.0, 0.9, 1e4))
    with pytest.raises(FlaggedRunError) as info:
        train("centralized", env, TrainConfig(episodes=50, schedule=sch), np.random.default_rng(0))
    assert info.value.episode >= 0


def test_evaluate_closed_form_rollout():
    """An actor that always moves right reaches the goal in 2 steps: cost 2, penalty 0."""
    env = Corridor()
    w = np.zeros((2, 3))
    right = DenseNet.from_layers([w], [np.array([-50.0, 50.0])])
    model = TrainedModel("centralized", [right], np.zeros((1, 1)), env.spec)
    rep = evaluate(model, env, 100, np.random.default_rng(0))
    assert rep.expected_cost == 2.0 and rep.expected_penalty.tolist() == [0.0]
    stay = DenseNet.from_layers([w], [np.array([50.0, -50.0])])
    rep = evaluate(TrainedModel("jal", [stay], np.zeros((1, 1)), env.spec), env, 10, np.random.default_rng(0))
    assert rep.expected_cost == 6.0 and rep.expected_penalty.tolist() == [6.0]


def test_evaluate_does_not_mutate_and_is_consistent():
    env = GridWorld(start_mode="shared")
    model, _ = train("centralized", env, SMALL, np.random.default_rng(2))
    before = [net_bytes(a) for a in model.actors]
    r1 = evaluate(model, env, 10_000, np.random.default_rng(100))
    r2 = evaluate(model, env, 10_000, np.random.default_rng(200))
    assert [net_bytes(a) for a in model.actors] == before
    se = np.sqrt(r1.penalty_stderr() ** 2 + r2.penalty_stderr() ** 2)
    assert np.all(np.abs(r1.expected_penalty - r2.expected_penalty) <= 4 * se + 1e-12)  # two independent estimates


def test_evaluate_rejects_zero_episodes():
    env = Corridor()
    model = TrainedModel("jal", [DenseNet.from_layers([np.zeros((2, 3))], [np.zeros(2)])], np.zeros((1, 1)), env.spec)
    with pytest.raises(ValueError):
        evaluate(model, env, 0, np.random.default_rng(0))


def test_model_checkpoint_roundtrip(tmp_path):
    env = GridWorld()
    model, _ = train("jal", env, SMALL, np.random.default_rng(4))
    model.save(tmp_path / "m.npz")
    back = TrainedModel.load(tmp_path / "m.npz")
    assert back.kind == "jal" and back.spec == model.spec
    assert net_bytes(back.actors[0]) == net_bytes(model.actors[0])
    per, glob = env.observe(env.reset(np.random.default_rng(0)))
    np.testing.assert_array_equal(back.action_probs(per, glob), model.action_probs(per, glob))


def test_action_probs_is_joint_distribution():
    env = GridWorld()
    model, _ = train("centralized", env, SMALL, np.random.default_rng(4))
    per, glob = env.observe(env.reset(np.random.default_rng(0)))
    p = model.action_probs(per, glob)
    assert p.shape == (16,) and abs(p.sum() - 1) < 1e-12


def report(cost, pen):
    return EvalReport(cost, np.array([pen]), 10)


def test_median_over_runs():
    assert median_over_runs([report(1.0, 0.5)]).expected_penalty.tolist() == [0.5]
    assert median_over_runs([report(v, v) for v in (1, 2, 3)]).expected_cost == 2.0
    assert median_over_runs([report(v, v) for v in (1, 2, 3, 10)]).expected_penalty.tolist() == [2.5]
    with pytest.raises(ValueError):
        median_over_runs([])
