import pytest

from rgsr.synthbench.pairs import PROTOCOL_A, JitterSpec, make_pair
from rgsr.synthbench.scene import generate_scene, path_poses, preset

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def open_world():
    _, world = generate_scene(preset("bench-open", 0))
    return world


@pytest.fixture(scope="session")
def open_pair(open_world):
    return make_pair(open_world, path_poses(open_world, 4)[1], JitterSpec(protocol=PROTOCOL_A), 1)


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion; printed in the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
