import numpy as np
import pytest


class ScriptedRng:
    """Stand-in random source that replays fixed draws."""

    def __init__(self, integers=(), randoms=()):
        self._ints = list(integers)
        self._floats = list(randoms)

    def integers(self, high, *args, **kwargs):
        value = self._ints.pop(0)
        assert 0 <= value < high
        return value

    def random(self, shape=None):
        if shape is None:
            return self._floats.pop(0)
        n = int(np.prod(shape))
        values, self._floats = self._floats[:n], self._floats[n:]
        return np.array(values, dtype=np.float64).reshape(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record a criterion verdict, print it, then assert it."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> None:
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
