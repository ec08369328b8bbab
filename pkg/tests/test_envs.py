import numpy as np
import pytest

from conftest import ScriptedRng
from nestedac.envs import (
    DOWN, LEFT, RIGHT, STAY, UP, CoinGame, CoinGameState, CooperativeNavigation, GameSpec, GridWorld,
    GridWorldState, NavState, TerminalStateError, coin_reset, grid_reset, make_env, nav_reset,
)
from nestedac.envs.base import grid_move
from nestedac.envs.coin import BLUE, RED
from nestedac.envs.grid import TARGET


# -- contract ------------------------------------------------------------------

def test_game_spec_invariants():
    with pytest.raises(ValueError):
        GameSpec("x", 0, (), (), 1, 0, 1, ())
    with pytest.raises(ValueError):
        GameSpec("x", 1, (2,), (3,), 3, 1, 5, (-0.1,))
    with pytest.raises(ValueError):
        GameSpec("x", 1, (2,), (3,), 3, 1, 5, (0.1,), gamma=0.0)
    spec = GameSpec("x", 1, (2,), (3,), 3, 1, 5, (0.1,))
    assert spec.to_json()["thresholds"] == [0.1]


def test_make_env_rejects_unknown_id():
    with pytest.raises(ValueError, match="unknown environment"):
        make_env("chess")


# -- grid world ----------------------------------------------------------------

def test_grid_reset_forced_draws():
    assert grid_reset(ScriptedRng([0, 0])) == GridWorldState(0, 0, 0)
    assert grid_reset(ScriptedRng([3, 3])) == GridWorldState(3, 3, 0)
    assert grid_reset(ScriptedRng([5]), "shared") == GridWorldState(5, 5, 0)


def test_grid_reset_uniform_frequencies(rng):
    env = GridWorld()
    cells = np.array([env.reset(rng).pos1 for _ in range(100_000)])
    freq = np.bincount(cells, minlength=16) / cells.size
    assert np.all(np.abs(freq - 1 / 16) < 0.01)


@pytest.mark.parametrize("state, actions, expected, penalty, terminal", [
    ((3, 3), (UP, UP), (7, 7), 1.0, False),
    ((7, 7), (UP, UP), (11, 11), 0.0, True),
    ((0, 0), (DOWN, LEFT), (0, 0), 1.0, False),
    ((10, 2), (RIGHT, UP), (11, 6), 0.0, False),
])
def test_grid_step_examples(state, actions, expected, penalty, terminal):
    out = GridWorld().step(GridWorldState(*state), actions)
    assert (out.next_state.pos1, out.next_state.pos2) == expected
    assert out.penalties.tolist() == [penalty]
    assert out.terminal is terminal


def test_grid_path_from_three_has_one_overlap():
    env = GridWorld()
    s = GridWorldState(3, 3)
    total = 0.0
    while not env.is_terminal(s):
        out = env.step(s, (UP, UP))
        total += out.penalties[0]
        s = out.next_state
    assert total == 1.0 and (s.pos1, s.pos2) == (11, 11)


def test_grid_target_is_absorbing():
    env = GridWorld()
    for a in range(4):
        out = env.step(GridWorldState(TARGET, 0), (a, UP))
        assert out.next_state.pos1 == TARGET
        assert out.cost == 1.0  # only agent 2 is still away


def test_grid_cost_counts_agents_off_target():
    env = GridWorld()
    assert env.step(GridWorldState(0, 5), (UP, UP)).cost == 2.0
    assert env.step(GridWorldState(10, 5), (RIGHT, UP)).cost == 1.0


def test_wall_rule_exhaustive():
    """Every boundary cell with an outward action stays put (16 cells x 4 actions checked)."""
    for cell in range(16):
        x, y = cell % 4, cell // 4
        for action in (UP, DOWN, LEFT, RIGHT):
            outward = ((action == UP and y == 3) or (action == DOWN and y == 0)
                       or (action == LEFT and x == 0) or (action == RIGHT and x == 3))
            moved = grid_move(cell, action, 4, 4)
            if outward:
                assert moved == cell
            else:
                assert moved != cell and abs(moved % 4 - x) + abs(moved // 4 - y) == 1


def test_grid_terminal_and_horizon():
    env = GridWorld()
    s = env.reset(np.random.default_rng(0))
    n = 0
    while not env.is_terminal(s):
        s = env.step(s, (LEFT, DOWN)).next_state
        n += 1
    assert n <= 10
    with pytest.raises(TerminalStateError):
        env.step(s, (UP, UP))


def test_grid_rejects_bad_action():
    with pytest.raises(ValueError):
        GridWorld().step(GridWorldState(0, 0), (UP, 7))


def test_grid_observations():
    env = GridWorld()
    per_agent, glob = env.observe(GridWorldState(2, 9))
    assert glob.shape == (32,) and glob[2] == 1 and glob[16 + 9] == 1 and glob.sum() == 2
    assert per_agent[0].tolist() == glob.tolist()
    assert per_agent[1][9] == 1 and per_agent[1][16 + 2] == 1
    own_only = GridWorld(observe_other=False).observe(GridWorldState(2, 9))[0]
    assert own_only[0].shape == (16,) and own_only[1][9] == 1


def test_grid_determinism_given_stream():
    env = GridWorld()
    runs = []
    for _ in range(2):
        r = np.random.default_rng(7)
        s = env.reset(r)
        trace = [s]
        while not env.is_terminal(s):
            s = env.step(s, (int(r.integers(4)), int(r.integers(4)))).next_state
            trace.append(s)
        runs.append(trace)
    assert runs[0] == runs[1]


# -- coin game -----------------------------------------------------------------

def test_coin_reset_forced_draw():
    # blue cell, red cell, index into the free-cell list, colour
    state = coin_reset(ScriptedRng([0, 8, 3, BLUE]))
    assert state == CoinGameState(0, 8, 4, BLUE, 0)


def test_coin_reset_statistics(rng):
    colors, cells, under_agent = [], [], 0
    for _ in range(100_000):
        s = coin_reset(rng)
        colors.append(s.coin_color)
        cells.append(s.coin_pos)
        under_agent += s.coin_pos in (s.pos_blue, s.pos_red)
    assert abs(np.mean(colors) - 0.5) < 0.01
    assert min(cells) >= 0 and max(cells) <= 8
    assert under_agent == 0


def test_coin_matching_collection():
    env = CoinGame()
    s = CoinGameState(pos_blue=3, pos_red=8, coin_pos=4, coin_color=BLUE)
    out = env.step(s, (RIGHT, LEFT), np.random.default_rng(0))
    assert out.cost == -1.0 and out.penalties.tolist() == [0.0]
    assert out.info["collected"]
    nxt = out.next_state
    assert nxt.coin_pos not in (nxt.pos_blue, nxt.pos_red)


def test_coin_mismatched_collection():
    env = CoinGame()
    s = CoinGameState(pos_blue=0, pos_red=3, coin_pos=4, coin_color=BLUE)
    out = env.step(s, (LEFT, RIGHT), np.random.default_rng(0))
    assert out.cost == -1.0 and out.penalties.tolist() == [1.0]


def test_coin_simultaneous_collection_counts_once():
    env = CoinGame()
    s = CoinGameState(pos_blue=3, pos_red=5, coin_pos=4, coin_color=RED)
    out = env.step(s, (RIGHT, LEFT), np.random.default_rng(0))
    assert out.cost == -1.0 and out.penalties.tolist() == [1.0]


def test_coin_no_event():
    env = CoinGame()
    out = env.step(CoinGameState(0, 8, 4, RED), (LEFT, RIGHT), np.random.default_rng(0))
    assert out.cost == 0.0 and out.penalties.tolist() == [0.0]
    assert out.next_state.coin_pos == 4


def test_coin_horizon_and_observation():
    env = CoinGame(max_steps=3)
    r = np.random.default_rng(1)
    s = env.reset(r)
    for _ in range(3):
        out = env.step(s, (UP, DOWN), r)
        s = out.next_state
    assert out.terminal
    with pytest.raises(TerminalStateError):
        env.step(s, (UP, UP), r)
    per_agent, glob = env.observe(CoinGameState(0, 8, 4, RED))
    planes = glob.reshape(4, 9)
    assert planes[0, 0] == planes[1, 8] == planes[3, 4] == 1 and planes.sum() == 3
    assert all(np.array_equal(p, glob) for p in per_agent)


def test_coin_respawn_never_on_agent(rng):
    env = CoinGame()
    for _ in range(200):
        s = env.reset(rng)
        while not env.is_terminal(s):
            out = env.step(s, (int(rng.integers(4)), int(rng.integers(4))), rng)
            if out.info["collected"]:
                assert out.next_state.coin_pos not in (out.next_state.pos_blue, out.next_state.pos_red)
            s = out.next_state


# -- navigation ----------------------------------------------------------------

def test_nav_forced_reset_and_zero_cost():
    env = CooperativeNavigation()
    s = nav_reset(ScriptedRng(randoms=[0, 0, 1, 1, 0, 0, 1, 1]))
    assert np.array_equal(s.agents, [[0, 0], [1, 1]]) and np.array_equal(s.landmarks, [[0, 0], [1, 1]])
    assert env.cost(s) == 0.0
    out = env.step(s, (STAY, STAY))
    assert out.cost == 0.0 and out.terminal


def test_nav_positions_and_reset_cost(rng):
    env = CooperativeNavigation()
    costs = []
    for _ in range(10_000):
        s = env.reset(rng)
        assert np.all((s.agents >= 0) & (s.agents <= 1)) and np.all((s.landmarks >= 0) & (s.landmarks <= 1))
        costs.append(env.cost(s))
    assert 0 < np.mean(costs) < 2 * 2 * np.sqrt(2)


def test_nav_collision_penalty():
    env = CooperativeNavigation(reach_threshold=0.0)
    s = NavState(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert env.step(s, (STAY, STAY)).penalties.tolist() == [1.0]
    apart = NavState(np.array([[0.2, 0.5], [0.8, 0.5]]), s.landmarks)
    assert env.step(apart, (STAY, STAY)).penalties.tolist() == [0.0]


def test_nav_single_landmark_cost():
    env = CooperativeNavigation(n_landmarks=1)
    s = NavState(np.array([[0.3, 0.4], [1.0, 1.0]]), np.array([[0.0, 0.0]]))
    assert env.cost(s) == pytest.approx(0.5, abs=1e-15)


def test_nav_moves_are_clamped_and_lipschitz(rng):
    env = CooperativeNavigation(reach_threshold=0.0)
    for _ in range(500):
        s = env.reset(rng)
        acts = (int(rng.integers(5)), int(rng.integers(5)))
        out = env.step(s, acts)
        assert np.all((out.next_state.agents >= 0) & (out.next_state.agents <= 1))
        moved = np.linalg.norm(out.next_state.agents - s.agents, axis=1).max()
        assert abs(out.cost - env.cost(s)) <= env.n_landmarks * moved + 1e-12


def test_nav_terminal_rule(rng):
    env = CooperativeNavigation()
    for _ in range(200):
        s = env.reset(rng)
        assert not env.is_terminal(s)
        while not env.is_terminal(s):
            out = env.step(s, (int(rng.integers(5)), int(rng.integers(5))))
            s = out.next_state
        assert out.cost < 2.0 or s.steps == 30
