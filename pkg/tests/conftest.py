import pytest

from predmeta.datasets import D3, covid_corticosteroids


@pytest.fixture(scope="session")
def covid():
    return covid_corticosteroids("reported")


@pytest.fixture(scope="session")
def d3():
    return D3


# Acceptance checks register one summary line each; they are echoed at the
# end of the run so they show up even when output capture is on.
_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  [{tag}] {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
