import json
from pathlib import Path

import pytest

from merton_lattice.config import RunConfig
from merton_lattice.model import make_model

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SHIPPED = sorted(CONFIG_DIR.glob("*.json"))

ACCEPTANCE_LINES: list = []


def load_shipped(path):
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


@pytest.fixture
def bs_model():
    return make_model([1.0], 0.05, 1.0, [[0.2]])


@pytest.fixture
def jump_model():
    return make_model(
        [1.0], 0.05, 1.0, [[0.2]], 0.5, {"type": "discrete", "values": [[-0.25]], "probs": [1.0]}
    )


@pytest.fixture
def model_2d():
    return make_model(
        [1.0, 0.9], 0.03, 0.5, [[0.2, 0.0], [0.1, 0.25]], 2.0,
        {"type": "discrete", "values": [[0.1, -0.2], [-0.1, 0.4]], "probs": [0.5, 0.5]},
    )


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
