from importlib import resources

import pytest

from daeire.model_io import load_model, load_point

FIXTURES = resources.files("daeire") / "fixtures"


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


def model(name: str):
    return load_model(fixture_path(f"{name}.dae"))


def start_point(name: str, sys=None):
    sys = sys or model(name)
    return load_point(fixture_path(f"{name}.json"), sys)


@pytest.fixture
def example4():
    return model("example4")


@pytest.fixture
def beam():
    return model("beam")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
