import functools

import numpy as np
import pytest

from fracbismut import FractionalKernelSet, TimeGrid


@functools.lru_cache(maxsize=None)
def kernel_set(T, n, H):
    return FractionalKernelSet(TimeGrid(T, n), H, diagnostic=(H == 0.5))


@pytest.fixture
def kernels():
    return kernel_set


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_CRITERIA = 12


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def report(k, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {k:2d}: {detail}"
        lines[k] = line
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, ACCEPTANCE_CRITERIA + 1):
        terminalreporter.write_line(lines.get(k, f"FAIL criterion {k:2d}: not completed"))
