import pytest

from chelonia.harness import Deployment, Topology


def make_deployment(seed: int = 0, settle: float = 1.0, **kwargs) -> Deployment:
    kwargs.setdefault("shepherds", 3)
    return Deployment(Topology(**kwargs), seed=seed).start(settle=settle)


@pytest.fixture
def deploy():
    return make_deployment


CRITERIA: list[str] = []


@pytest.fixture
def criteria():
    """Collects ``criterion N: PASS|FAIL`` lines, repeated in the terminal summary."""
    return CRITERIA


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
