import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranger_nav.config import PlannerConfig
from ranger_nav.fmm import fmm_solve
from ranger_nav.fusion import SemanticObject
from ranger_nav.geometry import PointCloud, voxelize
from ranger_nav.maps import FREE, OBSTACLE, UNKNOWN, FrontierCluster, GridMaps, GridSpec
from ranger_nav.planner import (FRONTIER, OBJECT_GOAL, Blacklist, Waypoint, candidate_waypoints,
                                nearest_cell, open_frontiers, report_unreachable, score_all,
                                score_waypoint, select_waypoint)

CS = 0.1
CFG = PlannerConfig()


def open_maps(H=40, W=40):
    spec = GridSpec(CS, 0.0, 0.0, W, H)
    return GridMaps(spec, np.full((H, W), FREE, np.int8), np.ones((H, W), bool), np.zeros((H, W)))


def centre(cell):
    return np.array([(cell[0] + 0.5) * CS, 0.5, (cell[1] + 0.5) * CS])


def goal_object(oid, cell, conf=1.0):
    seen = int(round(1 / conf))
    cloud = PointCloud(centre(cell)[None], np.ones(1))
    return SemanticObject(oid, {"chair": 1}, cloud, np.zeros(4), seen, voxelize(cloud, CS))


def frontier(cells):
    cells = tuple(sorted(cells))
    c = np.mean([centre(x)[[0, 2]] for x in cells], axis=0)
    return FrontierCluster(cells, c, len(cells))


def wp(kind, cell, sid=0, score=0.0, conf=0.0, size=0):
    return Waypoint(kind, cell, sid, score, conf, size)


def nearest_free_oracle(ok, cell):
    best = None
    for iz in range(ok.shape[0]):
        for ix in range(ok.shape[1]):
            if ok[iz, ix]:
                key = ((ix - cell[0]) ** 2 + (iz - cell[1]) ** 2, iz, ix)
                best = key if best is None or key < best else best
    return None if best is None else (best[2], best[1])


# ---------------------------------------------------------------- candidates

def test_candidates_union():
    m = open_maps()
    frs = [frontier([(1, 1), (2, 1)]), frontier([(30, 30)]), frontier([(5, 20), (5, 21)])]
    c = candidate_waypoints([], frs, m)
    assert [w.kind for w in c] == [FRONTIER] * 3
    c = candidate_waypoints([goal_object(7, (10, 10))], frs[:2], m)
    assert [w.kind for w in c] == [OBJECT_GOAL, FRONTIER, FRONTIER]
    assert c[0].source_id == 7 and c[0].target_cell == (10, 10)
    assert candidate_waypoints([], [], m) == []


def test_object_inside_obstacle_snaps_to_free():
    m = open_maps()
    m.obstacle[9:12, 9:12] = OBSTACLE
    c = candidate_waypoints([goal_object(0, (10, 10))], [], m)
    t = c[0].target_cell
    assert m.free[t[1], t[0]]
    assert t == nearest_free_oracle(m.free, (10, 10))
    assert math.hypot(t[0] - 10, t[1] - 10) == 2.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_nearest_cell_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    ok = rng.random((15, 17)) < 0.2
    cell = (int(rng.integers(-3, 20)), int(rng.integers(-3, 18)))
    assert nearest_cell(ok, cell) == nearest_free_oracle(ok, cell)


def test_frontier_target_stays_on_its_cluster():
    m = open_maps()
    fr = frontier([(5, 5), (5, 6), (5, 7), (6, 5), (7, 5)])    # L shape, centroid off the cells
    t = candidate_waypoints([], [fr], m)[0].target_cell
    assert t in fr.cells


def test_open_frontiers_drops_sealed_pockets():
    m = open_maps(60, 60)
    m.obstacle[20:25, 20:25] = UNKNOWN     # small enclosed hole
    m.obstacle[:, 50:] = UNKNOWN          # touches the raster edge
    near_hole = frontier([(19, 22)])
    near_edge = frontier([(49, 30)])
    assert open_frontiers(m, [near_hole, near_edge], 150) == [near_edge]
    assert open_frontiers(m, [near_hole], 10) == [near_hole]


# ---------------------------------------------------------------- scoring

def test_object_score_examples():
    m = open_maps()
    m.value[10, 10] = 1.0
    f = fmm_solve(m, [(0, 0)], inflate_radius=0)
    w = wp(OBJECT_GOAL, (10, 10), conf=1.0)
    assert score_waypoint(w, m, f) == pytest.approx(CFG.lambda_c + CFG.lambda_v_obj)


def test_nearer_frontier_scores_higher():
    m = open_maps()
    f = fmm_solve(m, [(0, 20)], inflate_radius=0)
    a = wp(FRONTIER, (10, 20), size=5)
    b = wp(FRONTIER, (20, 20), size=5)
    sa, sb = score_waypoint(a, m, f, max_size=5), score_waypoint(b, m, f, max_size=5)
    assert sa > sb
    assert sa - sb == pytest.approx(CFG.lambda_d * 1.0 / m.spec.diameter)


def test_value_region_beats_empty_region():
    m = open_maps()
    m.value[5:10, 30:35] = 0.9
    f = fmm_solve(m, [(20, 20)], inflate_radius=0)
    rich = wp(FRONTIER, (32, 8), size=4)      # mirror images across the diagonal through the goal
    poor = wp(FRONTIER, (8, 32), size=4)
    assert f.at(rich.target_cell) == f.at(poor.target_cell)
    diff = score_waypoint(rich, m, f, max_size=4) - score_waypoint(poor, m, f, max_size=4)
    assert diff == pytest.approx(CFG.lambda_v * 0.9)


def test_value_window_radius():
    m = open_maps()
    m.value[20, 26] = 1.0         # 6 cells away: outside the 5-cell disc
    f = fmm_solve(m, [(0, 0)], inflate_radius=0)
    w = wp(FRONTIER, (20, 20), size=1)
    assert score_waypoint(w, m, f, max_size=1) == pytest.approx(
        CFG.lambda_s - CFG.lambda_d * f.at((20, 20)) / m.spec.diameter)
    m.value[20, 25] = 0.5
    assert score_waypoint(w, m, f, max_size=1) == pytest.approx(
        0.5 * CFG.lambda_v + CFG.lambda_s - CFG.lambda_d * f.at((20, 20)) / m.spec.diameter)


def test_unreachable_scores_minus_inf():
    m = open_maps()
    m.obstacle[:, 20] = OBSTACLE
    f = fmm_solve(m, [(5, 5)], inflate_radius=0)
    assert score_waypoint(wp(FRONTIER, (30, 5), size=3), m, f) == -math.inf
    assert score_waypoint(wp(OBJECT_GOAL, (30, 5), conf=1.0), m, f) == -math.inf


def test_size_normalised_by_largest():
    m = open_maps()
    f = fmm_solve(m, [(0, 0)], inflate_radius=0)
    ws = score_all([wp(FRONTIER, (5, 5), 0, size=10), wp(FRONTIER, (5, 5), 1, size=5)], m, f)
    assert ws[0].score - ws[1].score == pytest.approx(CFG.lambda_s * 0.5)


# ---------------------------------------------------------------- selection

def test_select_examples():
    bl = Blacklist()
    only = wp(FRONTIER, (3, 3), score=0.1)
    assert select_waypoint([only], bl, 0) == only
    a, b = wp(FRONTIER, (3, 3), 0, 0.9), wp(FRONTIER, (30, 30), 1, 0.5)
    bl = report_unreachable(bl, a, 0)
    assert select_waypoint([a, b], bl, 1) == b
    assert select_waypoint([a], bl, 1) is None
    assert select_waypoint([wp(FRONTIER, (1, 1), score=-math.inf)], Blacklist(), 0) is None


def test_confident_object_overrides_richer_frontier():
    obj = wp(OBJECT_GOAL, (3, 3), 0, score=0.35, conf=0.5)
    rich = wp(FRONTIER, (30, 30), 0, score=0.69, size=500)
    assert select_waypoint([rich, obj], Blacklist(), 0, theta_obj=0.5) == obj
    # below the floor the scores decide
    weak = wp(OBJECT_GOAL, (3, 3), 0, score=0.35, conf=0.49)
    assert select_waypoint([rich, weak], Blacklist(), 0, theta_obj=0.5) == rich


def test_select_ties():
    m = open_maps()
    f = fmm_solve(m, [(0, 0)], inflate_radius=0)
    o = wp(OBJECT_GOAL, (10, 10), 3, score=0.4, conf=0.2)
    fr = wp(FRONTIER, (5, 5), 0, score=0.4)
    assert select_waypoint([fr, o], Blacklist(), 0, f) == o
    near, far = wp(FRONTIER, (5, 5), 2, 0.4), wp(FRONTIER, (20, 20), 1, 0.4)
    assert select_waypoint([far, near], Blacklist(), 0, f) == near
    x, y = wp(FRONTIER, (5, 6), 4, 0.4), wp(FRONTIER, (6, 5), 1, 0.4)
    assert select_waypoint([x, y], Blacklist(), 0, f) == y


cand = st.builds(lambda kind, x, z, sid, sc, conf: wp(kind, (x, z), sid, sc, conf if kind == OBJECT_GOAL else 0.0),
                 st.sampled_from([OBJECT_GOAL, FRONTIER]), st.integers(0, 39), st.integers(0, 39),
                 st.integers(0, 5), st.one_of(st.floats(-1, 2), st.just(-math.inf)),
                 st.floats(0, 1))


@settings(max_examples=150, deadline=None)
@given(st.lists(cand, max_size=12), st.lists(st.integers(0, 11), max_size=6), st.integers(0, 250))
def test_selection_properties(cands, bad, step):
    bl = Blacklist()
    for k in bad:
        if k < len(cands):
            bl = report_unreachable(bl, cands[k], 0)
    got = select_waypoint(cands, bl, step)
    assert got == select_waypoint(list(cands), bl, step)
    if got is None:
        return
    assert not bl.contains(got, step)
    assert math.isfinite(got.score)
    eligible = [w for w in cands if math.isfinite(w.score) and not bl.contains(w, step)]
    if any(w.kind == OBJECT_GOAL and w.confidence >= CFG.theta_obj for w in eligible):
        assert got.kind == OBJECT_GOAL and got.confidence >= CFG.theta_obj
    elif not any(w.kind == OBJECT_GOAL for w in eligible):
        assert got.score == max(w.score for w in eligible)


# ---------------------------------------------------------------- blacklist

def test_report_unreachable_examples():
    a = wp(FRONTIER, (10, 10))
    bl = report_unreachable(Blacklist(), a, 5)
    assert len(bl.entries) == 1 and bl.entries[0].count == 1
    bl2 = report_unreachable(bl, wp(FRONTIER, (12, 12)), 7)     # 2.83 cells away
    assert len(bl2.entries) == 1 and bl2.entries[0].count == 2 and bl2.entries[0].step == 7
    bl3 = report_unreachable(bl2, wp(FRONTIER, (14, 10)), 8)    # 4 cells away
    assert len(bl3.entries) == 2
    # different kind at the same cell is a separate entry
    assert len(report_unreachable(bl, wp(OBJECT_GOAL, (10, 10)), 6).entries) == 2
    assert bl.entries[0].count == 1     # reports never mutate the input


def test_blacklist_ttl():
    a = wp(FRONTIER, (10, 10), score=1.0)
    bl = report_unreachable(Blacklist(ttl=100), a, 0)
    assert bl.contains(a, 99)
    assert not bl.contains(a, 100)
    assert select_waypoint([a], bl, 100) == a
    assert report_unreachable(bl, wp(FRONTIER, (40, 40)), 100).entries[0].cell == (40, 40)
