import numpy as np
import pytest

from fairot.otcore import Empirical1D

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Call ``acceptance(number, title, passed, detail)`` to add a summary line."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, title, passed, detail=""):
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}  {detail}".rstrip()
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_empirical(rng, n, uniform=False, scale=1.0):
    x = rng.normal(size=n) * scale
    w = np.full(n, 1.0 / n) if uniform else rng.dirichlet(np.ones(n))
    return Empirical1D.from_samples(x, w)
