import numpy as np
import pytest

from ranger_nav.world import World, WorldObject


def box_world(rows=30, cols=30, objects=(), interior_walls=(), sigma=1.0, seed=0, cell=0.1):
    """Empty walled rectangle; ``interior_walls`` is a list of (r0, c0, r1, c1) blocks."""
    walls = np.zeros((rows, cols), dtype=bool)
    walls[0] = walls[-1] = True
    walls[:, 0] = walls[:, -1] = True
    for r0, c0, r1, c1 in interior_walls:
        walls[r0:r1, c0:c1] = True
    objs = tuple(WorldObject(cat, tuple(cells), h) for cat, cells, h in objects)
    return World(cell, walls, objs, scale_factor=sigma, seed=seed)


def block(r0, c0, h, w):
    return [(r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w)]


@pytest.fixture
def open_room():
    return box_world(40, 40)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
