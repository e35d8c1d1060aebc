import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def ks_critical_1pct(n: int) -> float:
    """Asymptotic one-sample KS critical value at the 1% level."""
    return 1.628 / np.sqrt(n)


# one verdict line per acceptance criterion, replayed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
