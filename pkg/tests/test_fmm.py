import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dijkstra8
from ranger_nav.fmm import (NoPathError, PlannedPath, check_stop, extract_path, fmm_solve, inflate,
                            next_action, traversal_cost)
from ranger_nav.fusion import SemanticObject
from ranger_nav.geometry import PointCloud, Pose, voxelize
from ranger_nav.maps import FREE, OBSTACLE, UNKNOWN, GridMaps, GridSpec
from ranger_nav.world import Action

CS = 0.1


def grid(walls, explored=True):
    """GridMaps from a boolean wall raster [iz, ix]; everything else free."""
    walls = np.asarray(walls, bool)
    H, W = walls.shape
    obst = np.where(walls, OBSTACLE, FREE).astype(np.int8)
    return GridMaps(GridSpec(CS, 0.0, 0.0, W, H), obst, np.full((H, W), explored), np.zeros((H, W)))


def random_walls(rng, H=40, W=40, density=0.2):
    w = rng.random((H, W)) < density
    return w


def rc(cells):
    return [(iz, ix) for ix, iz in cells]


def test_goal_cell_is_zero():
    f = fmm_solve(grid(np.zeros((10, 10))), [(4, 6)], inflate_radius=0)
    assert f.at((4, 6)) == 0.0
    assert f.values.min() == 0.0


def test_free_space_axis_distance():
    f = fmm_solve(grid(np.zeros((101, 101))), [(50, 50)], inflate_radius=0)
    for cell in [(80, 50), (20, 50), (50, 80), (50, 20)]:
        assert f.at(cell) == pytest.approx(3.0, rel=0.02)


def test_free_space_within_two_percent():
    f = fmm_solve(grid(np.zeros((101, 101))), [(50, 50)], inflate_radius=0)
    zz, xx = np.mgrid[0:101, 0:101]
    d = CS * np.hypot(xx - 50, zz - 50)
    far = d >= 5 * CS
    assert np.max(np.abs(f.values[far] - d[far]) / d[far]) <= 0.02


def test_sealed_cell_is_infinite():
    w = np.zeros((20, 20), bool)
    w[5:10, 5] = w[5:10, 9] = w[5, 5:10] = w[9, 5:10] = True
    f = fmm_solve(grid(w), [(1, 1)], inflate_radius=0)
    assert math.isinf(f.at((7, 7)))
    with pytest.raises(NoPathError):
        extract_path(f, (7, 7))


def test_goal_outside_raster_raises():
    with pytest.raises(NoPathError):
        fmm_solve(grid(np.zeros((5, 5))), [(9, 9)])


def test_unknown_costs_double():
    m = grid(np.zeros((1, 30)))
    m.obstacle[:] = UNKNOWN
    f = fmm_solve(m, [(0, 0)], inflate_radius=0, unknown_speed=0.5)
    assert f.at((20, 0)) == pytest.approx(4.0)


def test_inflation_blocks_margin():
    w = np.zeros((15, 15), bool)
    w[7, 7] = True
    cost = traversal_cost(grid(w), 2)
    assert np.isinf(cost[7, 9]) and np.isinf(cost[9, 7]) and np.isfinite(cost[7, 10])
    # keep_free opens the margin around the agent but never the obstacle itself
    cost = traversal_cost(grid(w), 2, keep_free=(9, 7))
    assert np.isfinite(cost[7, 9]) and np.isinf(cost[7, 7])


def test_start_equals_goal():
    f = fmm_solve(grid(np.zeros((8, 8))), [(3, 3)], inflate_radius=0)
    p = extract_path(f, (3, 3))
    assert p.cells == ((3, 3),) and p.length == 0.0


def test_corridor_path():
    w = np.ones((5, 40), bool)
    w[2, 1:39] = False
    f = fmm_solve(grid(w), [(38, 2)], inflate_radius=0)
    p = extract_path(f, (1, 2))
    assert p.cells == tuple((ix, 2) for ix in range(1, 39))
    assert p.length == pytest.approx(37 * CS)


def u_detour():
    w = np.zeros((60, 60), bool)
    w[10:50, 30] = True        # long divider, open at the top
    w[49, 10:31] = True
    return w


def test_u_detour_within_dijkstra():
    w = u_detour()
    m = grid(w)
    start, goal = (20, 40), (40, 40)
    f = fmm_solve(m, [goal], inflate_radius=2)
    p = extract_path(f, start)
    blocked = inflate(w, 2)
    ref = dijkstra8(~blocked, [goal[::-1]], CS)[start[1], start[0]]
    assert math.isfinite(ref)
    assert abs(p.length - ref) / ref <= 0.08
    assert not any(blocked[iz, ix] for ix, iz in p.cells)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.3))
def test_field_admissible(seed, density):
    rng = np.random.default_rng(seed)
    w = random_walls(rng, 30, 30, density)
    goal = (int(rng.integers(30)), int(rng.integers(30)))
    w[goal[1], goal[0]] = False
    f = fmm_solve(grid(w), [goal], inflate_radius=0)
    dj = dijkstra8(~w, [goal[::-1]], CS)
    zz, xx = np.mgrid[0:30, 0:30]
    l2 = CS * np.hypot(xx - goal[0], zz - goal[1])
    free = ~w
    assert np.array_equal(np.isfinite(f.values) & free, np.isfinite(dj))
    ok = np.isfinite(dj)
    assert np.all(l2[ok] <= f.values[ok] + 1e-9)
    assert np.all(f.values[ok] <= dj[ok] + 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_paths_descend_and_avoid_inflation(seed):
    rng = np.random.default_rng(seed)
    w = random_walls(rng, 40, 40, 0.05)
    m = grid(w)
    cost = traversal_cost(m, 1)
    free = np.argwhere(np.isfinite(cost))
    gz, gx = free[rng.integers(len(free))]
    f = fmm_solve(m, [(gx, gz)], cost=cost)
    reach = np.argwhere(np.isfinite(f.values))
    for k in rng.integers(len(reach), size=5):
        sz, sx = reach[k]
        p = extract_path(f, (sx, sz))
        vals = [f.values[iz, ix] for ix, iz in p.cells]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 0.0
        assert all(np.isfinite(cost[iz, ix]) for ix, iz in p.cells)
        steps = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(p.cells, p.cells[1:])]
        assert all(s in (1.0, math.sqrt(2)) for s in steps)
        assert p.length == pytest.approx(CS * sum(steps))


def test_early_stop_matches_full_solve():
    rng = np.random.default_rng(4)
    w = random_walls(rng, 50, 50, 0.1)
    w[0, 0] = w[45, 45] = False
    m = grid(w)
    full = fmm_solve(m, [(0, 0)], inflate_radius=0)
    if not math.isfinite(full.at((45, 45))):
        pytest.skip("disconnected draw")
    part = fmm_solve(m, [(0, 0)], inflate_radius=0, stop_cell=(45, 45))
    assert extract_path(part, (45, 45)) == extract_path(full, (45, 45))


SPEC = GridSpec(CS, 0.0, 0.0, 50, 50)


def path_to(*cells):
    return PlannedPath(tuple(cells), 0.0)


def test_next_action_examples():
    # agent at cell (10, 10) centre, facing +x
    pose = Pose(1.05, 0.0, 1.05, 0.0)
    ahead = path_to((10, 10), (11, 10), (12, 10), (13, 10))
    assert next_action(ahead, pose, SPEC) is Action.MOVE_FORWARD
    left = path_to((10, 10), (10, 9), (10, 8), (10, 7))      # -z is +90 degrees
    assert next_action(left, pose, SPEC) is Action.TURN_LEFT
    right = path_to((10, 10), (10, 11), (10, 12))
    assert next_action(right, pose, SPEC) is Action.TURN_RIGHT
    # 20 degree heading error is outside the 15 degree tolerance
    p20 = Pose(1.05, 0.0, 1.05, math.radians(-20))
    assert next_action(ahead, p20, SPEC) is Action.TURN_LEFT
    p10 = Pose(1.05, 0.0, 1.05, math.radians(-10))
    assert next_action(ahead, p10, SPEC) is Action.MOVE_FORWARD
    down = Pose(1.05, 0.0, 1.05, 0.0, math.radians(-30))
    assert next_action(ahead, down, SPEC) is Action.LOOK_UP
    assert next_action(ahead, Pose(1.05, 0.0, 1.05, 0.0, math.radians(30)), SPEC) is Action.LOOK_DOWN


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-1.0, 1.0),
       st.lists(st.sampled_from([(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]),
                min_size=0, max_size=8))
def test_next_action_never_stops(yaw, pitch, moves):
    cells = [(25, 25)]
    for dx, dz in moves:
        cells.append((cells[-1][0] + dx, cells[-1][1] + dz))
    a = next_action(path_to(*cells), Pose(2.55, 0.0, 2.55, yaw, pitch), SPEC)
    assert a is not Action.STOP


def obj(points, seen=1):
    """A chair detected ``seen`` times but labelled chair only once."""
    cloud = PointCloud(np.asarray(points, float), np.ones(len(points)))
    return SemanticObject(0, {"chair": 1}, cloud, np.zeros(4), seen, voxelize(cloud, CS))


def test_check_stop_examples():
    m = grid(np.zeros((50, 50)))
    pose = Pose(1.05, 0.0, 2.55, 0.0)
    assert not check_stop(pose, [], m)
    near = obj([[1.55, 0.5, 2.55], [1.65, 0.5, 2.55]])
    assert check_stop(pose, [near], m)
    assert not check_stop(pose, [obj(near.cloud.points, seen=5)], m, conf_floor=0.5)
    # same object behind a wall that forces a long detour
    w = np.zeros((50, 50), bool)
    w[5:45, 13] = True
    assert not check_stop(pose, [near], grid(w))
