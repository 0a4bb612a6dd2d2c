import warnings

import pytest
from hypothesis import HealthCheck, settings

from fou_portfolio.asymptotics import ExpansionInputs
from fou_portfolio.fou_engine import FouParams
from fou_portfolio.market_model import paper_model

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GAMMA, RHO = 0.4, -0.5


def paper_inputs(eps: float, H: float = 0.6, a: float = 1.0, gamma: float = GAMMA, rho: float = RHO, T: float = 1.0):
    p = FouParams(a, H, eps)
    return ExpansionInputs.build(p, paper_model(p.sigma_ou, gamma, rho), T)


@pytest.fixture
def inputs_001():
    return paper_inputs(0.01)


@pytest.fixture(autouse=True)
def _quiet_truncation():
    from fou_portfolio.fou_engine import TruncationWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        yield


# -- acceptance report -------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a one-line PASS/FAIL verdict; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
