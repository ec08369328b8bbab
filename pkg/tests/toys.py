"""Small hand-built games shared by several test modules."""
import numpy as np

from nestedac.envs import GameSpec, StepOutcome


class Corridor:
    """Single-agent chain 0-1-2 with the goal at 2; action 1 moves right, action 0 stays.

    Penalty 1 is charged for staying. Used for the single-agent degeneracy check
    and as a deterministic closed-form rollout.
    """

    env_id = "corridor"

    def __init__(self, alpha=(0.1,), gamma=0.9):
        self.spec = GameSpec("corridor", 1, (2,), (3,), 3, 1, 6, tuple(alpha), gamma)

    def options(self):
        return {}

    def reset(self, rng):
        return (0, 0)

    def observe(self, state):
        v = np.zeros(3)
        v[state[0]] = 1.0
        return [v], v.copy()

    def is_terminal(self, state):
        return state[0] == 2 or state[1] >= 6

    def step(self, state, actions, rng=None):
        pos, t = state
        (a,) = actions
        nxt = (min(pos + a, 2), t + 1)
        per, glob = self.observe(nxt)
        return StepOutcome(nxt, per, glob, 1.0, np.array([1.0 - a]), self.is_terminal(nxt))
