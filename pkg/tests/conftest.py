import numpy as np
import pytest

from orthocheck.kernel import ConvKernel
from orthocheck.tensor_io import SplitMix64


@pytest.fixture
def rng():
    return SplitMix64(1234)


def random_kernel(seed, c_out, c_in, k, n, precision="f64"):
    return ConvKernel(SplitMix64(seed).normal((c_out, c_in, k, k), precision), n)


def random_input(seed, c, n, precision="f64", batch=()):
    return SplitMix64(seed + 10_000).normal(tuple(batch) + (c, n, n), precision)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm((a - b).ravel()) / max(np.linalg.norm(b.ravel()), 1e-300))


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record and assert one acceptance criterion; a summary line is printed at the end."""

    def check(label, ok, detail=""):
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
        assert ok, f"{label}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
