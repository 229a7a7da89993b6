import pytest

from gwlab import geometric, stable_frac


@pytest.fixture(scope="session")
def half_law():
    """StableFrac with alpha = 1/2, c = 2/3 (p1 = 0, j0 = 2)."""
    return stable_frac("1/2", "2/3")


@pytest.fixture(scope="session")
def heavy_law():
    """StableFrac with alpha = 0.8, c = 1/1.8 = 5/9 (p1 = 0, j0 = 2)."""
    return stable_frac([4, 5], [5, 9])


@pytest.fixture(scope="session")
def geo_law():
    return geometric()


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""

    def record(number, passed, detail):
        line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
