from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS  # noqa: E402
from vlnce.harness import fixtures  # noqa: E402
from vlnce.transfer import transfer_dataset  # noqa: E402


@pytest.fixture(scope="session")
def transfer_suite():
    """(scene, episodes, report) for every scene of the planted suite."""
    out = []
    for scene in fixtures.transfer_suite(seed=0):
        episodes, report = transfer_dataset(scene.env, scene.graph, scene.trajectories, scene.instructions)
        out.append((scene, episodes, report))
    return out


@pytest.fixture(scope="session")
def walk_dataset():
    """Open-room scene with 50 self-avoiding graph walks (4-6 hops) and their episodes."""
    scene = fixtures.walk_scene(seed=1, count=50)
    episodes, report = transfer_dataset(scene.env, scene.graph, scene.trajectories, scene.instructions)
    return scene, episodes, report


@pytest.fixture(scope="session")
def open_room():
    return fixtures.open_room(12.0)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        name, ok, detail = RESULTS[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k}. {name}: {detail}")
