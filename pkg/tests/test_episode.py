import math
import os

import numpy as np
import pytest

from conftest import block, box_world
from ranger_nav.config import Config
from ranger_nav.episode import (EpisodeResult, EpisodeSpec, compute_metrics, record_context_video,
                                run_episode)
from ranger_nav.geometry import Pose
from ranger_nav.memory import load_bank
from ranger_nav.agent import Navigator
from ranger_nav.render import read_pnm, render_episode, trajectory_cells, TRAJECTORY_RGB, UNKNOWN_RGB
from ranger_nav.world import Action, InvalidStateError, step_dynamics

from oracles import spl as spl_oracle


def chair_room():
    return box_world(40, 40, objects=[("chair", block(18, 25, 4, 4), 0.9)])


def two_rooms():
    # door in the dividing wall at rows 24..31
    return box_world(40, 70, objects=[("chair", block(8, 52, 4, 4), 0.9),
                                      ("sofa", block(30, 8, 4, 8), 0.6)],
                     interior_walls=[(0, 34, 24, 36), (32, 34, 40, 36)])


def result(success, shortest, path, steps=10, dtg=0.0):
    status = "success" if success else "stop_miss"
    return EpisodeResult("e", "chair", success, steps, path, shortest, dtg, status, ())


# ---------------------------------------------------------------- metrics

def test_metrics_examples():
    m = compute_metrics([result(False, 2.0, 3.0), result(False, 1.0, 1.0)])
    assert (m.sr, m.spl) == (0.0, 0.0)
    assert compute_metrics([result(True, 2.0, 2.0)]).spl == 1.0
    assert compute_metrics([result(True, 2.0, 4.0)]).spl == 0.5


def test_metrics_hand_fixture():
    rs = [result(True, 3.0, 4.5, 30, 0.4), result(False, 5.0, 2.0, 300, 2.5),
          result(True, 1.2, 1.0, 12, 0.1)]
    m = compute_metrics(rs)
    assert m.sr == pytest.approx(2 / 3, abs=1e-12)
    assert abs(m.spl - (3.0 / 4.5 + 0 + 1.0) / 3) <= 1e-12
    assert abs(m.spl - spl_oracle([(r.success, r.shortest_length, r.path_length) for r in rs])) <= 1e-12
    assert m.mean_steps == pytest.approx(114.0)
    assert m.mean_dtg == pytest.approx(1.0)
    assert m.spl <= m.sr


def test_metrics_rejects_empty():
    with pytest.raises(ValueError):
        compute_metrics([])


def test_result_validation():
    with pytest.raises(ValueError):
        EpisodeResult("e", "chair", True, 3, 1.0, 1.0, 0.0, "stop_miss", ())
    with pytest.raises(ValueError):
        EpisodeResult("e", "chair", False, 3, -1.0, 1.0, 0.0, "stop_miss", ())
    with pytest.raises(ValueError):
        EpisodeResult("e", "chair", False, 3, 1.0, 1.0, 0.0, "lost", ())


def test_spec_validation():
    w = chair_room()
    with pytest.raises(ValueError):
        EpisodeSpec(w, "chair", Pose(2.0, w.camera_height, 2.0), 0)
    with pytest.raises(InvalidStateError):
        EpisodeSpec(w, "chair", Pose(0.05, w.camera_height, 0.05))


# ---------------------------------------------------------------- episodes

def test_goal_in_view_stops_quickly():
    w = chair_room()
    r = run_episode(EpisodeSpec(w, "chair", Pose(2.0, w.camera_height, 2.0), 50))
    assert r.success and r.steps <= 3
    assert r.actions[-1] == "stop"
    assert r.dtg <= Config().episode.success_radius


def test_absent_goal_fails_cleanly():
    w = chair_room()
    r = run_episode(EpisodeSpec(w, "sofa", Pose(2.0, w.camera_height, 2.0), 60))
    assert not r.success and r.status in ("step_limit", "explored_out")
    assert math.isinf(r.shortest_length)
    assert r.spl_term == 0.0


def test_episode_reaches_goal_in_next_room():
    w = two_rooms()
    start = Pose(1.0, w.camera_height, 1.0, 0.0)
    r = run_episode(EpisodeSpec(w, "chair", start, 300))
    assert r.success, r.status
    assert r.steps <= 300 and len(r.actions) == r.steps
    assert r.path_length >= r.shortest_length - 1e-6
    # path length is the sum of true displacements
    steps = sum(math.hypot(b.x - a.x, b.z - a.z) for a, b in zip(r.trajectory, r.trajectory[1:]))
    assert r.path_length == pytest.approx(steps)


def test_episode_is_deterministic():
    w = two_rooms()
    spec = EpisodeSpec(w, "sofa", Pose(6.0, w.camera_height, 1.0, 1.0), 120, seed=3)
    assert run_episode(spec) == run_episode(spec)


def test_trajectory_replays_through_dynamics():
    w = two_rooms()
    r = run_episode(EpisodeSpec(w, "chair", Pose(1.0, w.camera_height, 1.0), 80))
    pose = r.trajectory[0]
    for a, want in zip(r.actions, r.trajectory[1:]):
        pose, _ = step_dynamics(w, pose, Action(a))
        assert pose == want


# ---------------------------------------------------------------- context recordings

def test_record_empty_sequence(tmp_path):
    w = chair_room()
    start = Pose(1.0, w.camera_height, 1.0)
    bank = record_context_video(w, [], tmp_path / "b.zip", start)
    assert len(bank) == 1
    assert bank.meta["endpoint"] == start.to_list()


def test_record_round_trip_and_endpoint(tmp_path):
    w = two_rooms()
    start = Pose(1.0, w.camera_height, 1.0)
    actions = [Action.TURN_LEFT] * 3 + [Action.TURN_RIGHT] * 3 + [Action.MOVE_FORWARD] * 8 \
        + [Action.TURN_RIGHT] * 3 + [Action.MOVE_FORWARD] * 10
    bank = record_context_video(w, actions, tmp_path / "b.zip", start)
    back = load_bank(tmp_path / "b.zip")
    assert len(back) == len(bank)
    for a, b in zip(bank.keyframes, back.keyframes):
        assert a.id == b.id and a.source == b.source
        assert np.allclose(a.cloud.points, b.cloud.points, atol=1e-5)
    pose = start
    for a in actions:
        pose, _ = step_dynamics(w, pose, a)
    assert bank.meta["endpoint"] == pose.to_list()
    assert back.meta["endpoint"] == pose.to_list()


def test_record_aborts_on_blocked_move():
    w = chair_room()
    start = Pose(0.2, w.camera_height, 2.0, math.pi)     # facing the west wall
    with pytest.raises(InvalidStateError, match="action 0"):
        record_context_video(w, [Action.MOVE_FORWARD], None, start)


def test_context_of_own_walk_reproduces_object_store():
    w = two_rooms()
    spec = EpisodeSpec(w, "chair", Pose(1.0, w.camera_height, 1.0), 60, seed=5)
    live, nav = run_episode(spec, keep_agent=True)
    assert live.actions[-1] == "stop"
    bank = record_context_video(w, [Action(a) for a in live.actions], None, spec.start, spec.seed)
    replay = Navigator(w, "chair", spec.start, Config(), spec.seed)
    replay.load_context(bank)
    assert len(replay.store) == len(nav.store) > 0
    for a, b in zip(nav.store, replay.store):
        assert a.id == b.id and a.category_votes == b.category_votes
        assert a.detection_count == b.detection_count
        assert np.allclose(a.mean_feature, b.mean_feature, atol=1e-9)
        assert a.voxels.occupied == b.voxels.occupied


# ---------------------------------------------------------------- rendering

def test_render_is_deterministic_and_marks_trajectory(tmp_path):
    w = two_rooms()
    spec = EpisodeSpec(w, "chair", Pose(1.0, w.camera_height, 1.0), 60)
    outs = []
    for k in range(2):
        r, nav = run_episode(spec, keep_agent=True)
        paths = render_episode(r, nav.maps, tmp_path / str(k), "ep")
        outs.append([open(p, "rb").read() for p in paths])
    assert outs[0] == outs[1]
    _, rgb = read_pnm(tmp_path / "0" / "ep_composite.ppm")
    for ix, iz in trajectory_cells(nav.maps, r.est_trajectory):
        assert tuple(rgb[iz, ix]) == TRAJECTORY_RGB
    for p in r.est_trajectory:
        c = (int(math.floor((p.x - nav.maps.spec.origin_x) / 0.1)),
             int(math.floor((p.z - nav.maps.spec.origin_z) / 0.1)))
        assert tuple(rgb[c[1], c[0]]) == TRAJECTORY_RGB
    comments, obst = read_pnm(tmp_path / "0" / "ep_obstacle.pgm")
    assert "cell_size 0.1" in comments and obst.shape == nav.maps.spec.shape


def test_render_of_barely_started_episode_is_mostly_unknown(tmp_path):
    w = two_rooms()
    r, nav = run_episode(EpisodeSpec(w, "chair", Pose(1.0, w.camera_height, 1.0), 3),
                         keep_agent=True)
    from ranger_nav.maps import GridMaps, GridSpec
    blank = GridMaps.blank(GridSpec(0.1, -2.0, -2.0, 60, 60))
    render_episode(r, blank, tmp_path, "b")
    _, rgb = read_pnm(tmp_path / "b_composite.ppm")
    unknown = (rgb == np.array(UNKNOWN_RGB, np.uint8)).all(-1).mean()
    assert unknown > 0.9
