import numpy as np
import pytest

from gpman.kernels import KernelSpec
from gpman.mesh import gen_circle, gen_dumbbell, gen_icosphere
from gpman.spectral import solve_eigs


@pytest.fixture(scope="session")
def circle():
    return gen_circle(512)


@pytest.fixture(scope="session")
def circle_spectrum(circle):
    return solve_eigs(circle, 64)


@pytest.fixture(scope="session")
def sphere3():
    return gen_icosphere(3)


@pytest.fixture(scope="session")
def sphere3_spectrum(sphere3):
    return solve_eigs(sphere3, 100)


@pytest.fixture(scope="session")
def dumbbell_small():
    return gen_dumbbell(400)


@pytest.fixture(scope="session")
def dumbbell_small_spectrum(dumbbell_small):
    return solve_eigs(dumbbell_small, 80)


@pytest.fixture
def circle_kernel():
    return KernelSpec("intrinsic", 2.5, 1.0, 1.0, 32, 1)


@pytest.fixture
def sphere_kernel():
    return KernelSpec("intrinsic", 2.5, 0.25, 1.0, 100, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
