from pathlib import Path

import pytest

from kgexplore.actions import parse
from kgexplore.world import load_fixture, load_world

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

WALKTHROUGH = [
    "open mailbox", "read leaflet", "east", "get egg from nest", "north", "take lamp",
    "turn on lamp", "south", "go down", "east", "take jewel",
]


@pytest.fixture(scope="session")
def world():
    return load_fixture("minigrue")


@pytest.fixture(scope="session")
def shed():
    return load_world(FIXTURES / "shed.json")


@pytest.fixture(scope="session")
def deadend():
    return load_world(FIXTURES / "deadend.json")


def actions_of(world, commands):
    return [parse(c, world.vocab, world.templates) for c in commands]


@pytest.fixture(scope="session")
def walkthrough(world):
    return actions_of(world, WALKTHROUGH)


_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[criterion] = line
        print(line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
