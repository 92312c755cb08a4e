import numpy as np
import pytest
from hypothesis import settings

# reproducible property runs
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def random_spd(rng, d, cond=100.0):
    """SPD matrix with log-uniform spectrum spanning ``cond``."""
    lam = np.exp(rng.uniform(0.0, np.log(cond), d))
    lam[0], lam[-1] = 1.0, cond  # pin the condition number
    Q = random_orthogonal(rng, d)
    return (Q * lam) @ Q.T


def random_symmetric(rng, d):
    M = rng.standard_normal((d, d))
    return 0.5 * (M + M.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
