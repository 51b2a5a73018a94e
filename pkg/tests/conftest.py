import pytest

from facelift_lab.market import EndowmentSpec, MarketParams
from facelift_lab.utility import UtilitySpec


@pytest.fixture
def sqrt_utility():
    return UtilitySpec(0.5)


@pytest.fixture
def market():
    # lam = mu / sigma = 0.3
    return MarketParams(0.09, 0.3)


@pytest.fixture
def logistic_two():
    """phi(eta0) = 1, inf phi = 0, sup phi = 2, so z_c(eta0) = 1 for p = 1/2."""
    return EndowmentSpec.logistic(0.0, 2.0, 0.0, 1.0)


@pytest.fixture
def logistic_unit():
    """inf phi = 0, sup phi = 1."""
    return EndowmentSpec.logistic(0.0, 1.0, 0.0, 1.0)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line; all lines are repeated in the terminal summary."""

    def emit(number: int, ok: bool, detail: str, seconds: float) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
