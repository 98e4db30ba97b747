import pytest

from qosmech.mechanisms import LinearQosScheme, LogQosScheme, MarketParams, ReservationScheme


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(criterion, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)

    return record


@pytest.fixture
def fig1_market():
    return MarketParams(v=5.0, c=1.0)


@pytest.fixture
def linear_fig1():
    return LinearQosScheme(k=2.0, c1=1.0)


@pytest.fixture
def log_fig1():
    return LogQosScheme(k=2.0, c1=1.0)


@pytest.fixture
def res_scheme():
    return ReservationScheme(k1=1.0, k2=1.0, c1=2.0, c2=2.0, c3=1.0)


@pytest.fixture
def res_market():
    return MarketParams(v=10.0, c=1.0)
