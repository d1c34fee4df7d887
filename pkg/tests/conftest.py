from collections.abc import Sequence

import numpy as np
import pytest

from bigsurvey.estfun import Observation


class Tripwire(Sequence):
    """Observation sequence that fails the test if a hidden unit is read."""

    def __init__(self, values, hidden):
        self._obs = [Observation(v) for v in np.atleast_1d(values)]
        self._hidden = set(int(i) for i in hidden)
        self.reads = []

    def __len__(self):
        return len(self._obs)

    def __getitem__(self, i):
        if isinstance(i, slice):
            raise AssertionError("slicing would read hidden units")
        i = int(i)
        if i in self._hidden:
            raise AssertionError(f"unobserved unit {i} was read")
        self.reads.append(i)
        return self._obs[i]


@pytest.fixture
def tripwire():
    return Tripwire


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, ok, detail=""):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
