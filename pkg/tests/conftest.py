import numpy as np
import pytest

from nanol.lie import sem_exp


def random_rotation_vector(rng, max_angle=np.pi - 1e-3):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


def random_tangent(rng, m, max_angle=np.pi - 1e-3, scale=1.0):
    phi = random_rotation_vector(rng, max_angle)
    return np.concatenate([phi, scale * rng.standard_normal(3 * m)])


def random_state(rng, m, max_angle=np.pi - 1e-3):
    return sem_exp(random_tangent(rng, m, max_angle))


def expm_series(A, terms=30):
    """Truncated power series of the matrix exponential."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(n, ok, detail)`` prints and records one PASS/FAIL line per criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
