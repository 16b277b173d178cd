import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_se(samples, expected, k=3.0):
    """True where the sample mean lies within k standard errors of ``expected``.

    Degenerate (zero-variance) coordinates must match exactly.
    """
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    # a constant column can still show a rounding-level std, so test it exactly
    constant = samples.min(axis=0) == samples.max(axis=0)
    exact = np.isclose(samples[0], expected, rtol=1e-12, atol=1e-12)
    return np.where(constant, exact, np.abs(mean - expected) <= k * se)

ACCEPTANCE_LINES = []


def report(number, title, passed, detail=""):
    """Record one acceptance line; printed in the terminal summary."""
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append((number, f"criterion {number:>2} {status}  {title}  [{detail}]"))
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
