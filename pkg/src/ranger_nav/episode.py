"""Episode specs, the run loop driver, metrics, and context-video recording."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .agent import Navigator
from .config import Config
from .fmm import NoPathError, extract_path, fmm_solve, next_action
from .geometry import Pose
from .maps import OBSTACLE, FREE, GridMaps, GridSpec
from .memory import MemoryBank, load_bank, maybe_insert_keyframe, save_bank
from .oracle import shortest_path_length
from .perception import DriftState, observe
from .world import (Action, InvalidStateError, World, check_free,
                    distance_to_goal, step_dynamics)

STATUSES = ("success", "stop_miss", "step_limit", "explored_out")


@dataclass(frozen=True)
class EpisodeSpec:
    world: World
    goal: str
    start: Pose
    max_steps: int = 300
    context_bank: object = None   # path to a bank archive, or a MemoryBank
    seed: int = 0
    episode_id: str = ""

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        check_free(self.world, self.start)


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    episode_id: str
    goal: str
    success: bool
    steps: int
    path_length: float
    shortest_length: float
    dtg: float
    status: str
    trajectory: tuple
    actions: tuple = ()
    context_status: str = "none"
    est_trajectory: tuple = ()

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.success != (self.status == "success"):
            raise ValueError("success flag and status disagree")
        if self.path_length < 0:
            raise ValueError("negative path length")

    @property
    def spl_term(self) -> float:
        if not self.success:
            return 0.0
        denom = max(self.path_length, self.shortest_length)
        return 1.0 if denom <= 0 else self.shortest_length / denom

    def __eq__(self, other):
        if not isinstance(other, EpisodeResult):
            return NotImplemented
        return (self.episode_id, self.goal, self.success, self.steps, self.path_length,
                self.shortest_length, self.dtg, self.status, self.trajectory, self.actions,
                self.context_status) == (
            other.episode_id, other.goal, other.success, other.steps, other.path_length,
            other.shortest_length, other.dtg, other.status, other.trajectory, other.actions,
            other.context_status)


@dataclass(frozen=True)
class MetricsSummary:
    sr: float
    spl: float
    mean_dtg: float
    mean_steps: float
    n: int


def compute_metrics(results) -> MetricsSummary:
    results = list(results)
    if not results:
        raise ValueError("no results to summarise")
    sr = float(np.mean([r.success for r in results]))
    spl = float(np.mean([r.spl_term for r in results]))
    return MetricsSummary(sr, spl, float(np.mean([r.dtg for r in results])),
                          float(np.mean([r.steps for r in results])), len(results))


def _load_context(ctx, cfg: Config) -> MemoryBank:
    if isinstance(ctx, MemoryBank):
        return ctx
    return load_bank(ctx, cfg.scale, cfg.memory)


def run_episode(spec: EpisodeSpec, cfg: Config = Config(), keep_agent: bool = False):
    """Run one episode to termination. With ``keep_agent`` also returns the
    Navigator (maps, store, bank) for rendering or inspection."""
    nav = Navigator(spec.world, spec.goal, spec.start, cfg, spec.seed)
    if spec.context_bank is not None:
        nav.load_context(_load_context(spec.context_bank, cfg))
    status = None
    while len(nav.actions) < spec.max_steps:
        action = nav.step()
        if action is None:
            status = "explored_out"
            break
        if action is Action.STOP:
            d = distance_to_goal(spec.world, nav.pose, spec.goal)
            status = "success" if d <= cfg.episode.success_radius else "stop_miss"
            break
    if status is None:
        status = "step_limit"
    dtg = distance_to_goal(spec.world, nav.pose, spec.goal)
    shortest = shortest_path_length(spec.world, spec.goal, (spec.start.x, spec.start.z),
                                    cfg.episode.success_radius)
    res = EpisodeResult(spec.episode_id, spec.goal, status == "success", len(nav.actions),
                        nav.path_length, shortest, dtg, status, tuple(nav.trajectory),
                        tuple(a.value for a in nav.actions), nav.context_status,
                        tuple(nav.est_trajectory))
    return (res, nav) if keep_agent else res


# ---------------------------------------------------------------- context videos

def true_maps(world: World) -> GridMaps:
    """The world's own occupancy as fully explored maps (for scripted tours)."""
    H, W = world.shape
    spec = GridSpec(world.cell_size, 0.0, 0.0, W, H)
    obst = np.where(world.blocked, OBSTACLE, FREE).astype(np.int8)
    return GridMaps(spec, obst, np.ones((H, W), dtype=bool), np.zeros((H, W)))


def _room_anchor(world: World, room) -> tuple:
    """Free cell with the most clearance, nearest the room centre."""
    from scipy import ndimage
    r0, c0, r1, c1 = room
    clear = ndimage.distance_transform_edt(~world.blocked)[r0:r1, c0:c1]
    rr, cc = np.mgrid[r0:r1, c0:c1]
    d = np.hypot(rr - (r0 + r1 - 1) / 2, cc - (c0 + c1 - 1) / 2)
    ok = clear >= min(6.0, clear.max())
    k = np.lexsort((cc[ok], rr[ok], d[ok]))[0]
    return int(rr[ok][k]), int(cc[ok][k])


def scripted_tour(world: World, start: Pose, order=None, spin: bool = True,
                  max_actions: int = 2000) -> list:
    """Teleoperation stand-in: drive through the room anchors along planned
    paths on the true map, spinning a full turn in each room."""
    maps = true_maps(world)
    rooms = list(world.rooms) or [(0, 0) + world.shape]
    if order is None:
        # greedy nearest-room order from the start
        left = list(range(len(rooms)))
        order, (pr, pc) = [], world.cell_of(start.x, start.z)
        while left:
            k = min(left, key=lambda i: (math.hypot(_room_anchor(world, rooms[i])[0] - pr,
                                                    _room_anchor(world, rooms[i])[1] - pc), i))
            order.append(k)
            left.remove(k)
            pr, pc = _room_anchor(world, rooms[k])
    pose, actions = start, []

    def go(a):
        nonlocal pose
        new, collided = step_dynamics(world, pose, a)
        if collided:
            raise InvalidStateError(f"scripted tour collided at action {len(actions)}")
        pose = new
        actions.append(a)

    for k in order:
        r, c = _room_anchor(world, rooms[k])
        field = fmm_solve(maps, [(c, r)], inflate_radius=2)
        while len(actions) < max_actions:
            cell = (int(pose.x // world.cell_size), int(pose.z // world.cell_size))
            try:
                path = extract_path(field, cell)
            except NoPathError:
                break
            if len(path.cells) <= 2:
                break
            go(next_action(path, pose, maps.spec, field.passable))
        if spin:
            for _ in range(12):
                go(Action.TURN_LEFT)
    return actions


def record_context_video(world: World, actions, out_path=None, start: Pose = None,
                         seed: int = 0, cfg: Config = Config()) -> MemoryBank:
    """Replay ``actions`` from ``start`` through the simulator and perception,
    gate frames into a keyframe bank, and (optionally) archive it.

    The final true and estimated poses are stored in the archive's meta.
    STOP actions are ignored. A blocked move aborts with its index.
    """
    if start is None:
        raise ValueError("a start pose is required")
    rng = np.random.default_rng(seed)
    drift = DriftState(start)
    bank = MemoryBank(voxel_size=cfg.fusion.voxel_size, scale_cfg=cfg.scale, mem_cfg=cfg.memory)
    pose, frame = start, 0
    obs = observe(world, pose, drift, frame, cfg.perception)
    maybe_insert_keyframe(bank, obs, source="context")
    for k, a in enumerate(actions):
        a = Action(a)
        if a is Action.STOP:
            continue
        new, collided = step_dynamics(world, pose, a)
        if collided:
            raise InvalidStateError(f"action {k} ({a.value}) leaves free space")
        pose = new
        drift = drift.advance(rng, cfg.perception)
        frame += 1
        obs = observe(world, pose, drift, frame, cfg.perception)
        maybe_insert_keyframe(bank, obs, source="context")
    bank.meta.update({
        "endpoint": pose.to_list(),
        "endpoint_estimated": obs.estimated_pose.to_list(),
        "start": start.to_list(),
        "world_seed": world.seed,
        "n_frames": frame + 1,
    })
    if out_path is not None:
        save_bank(bank, out_path)
    return bank


def start_near(world: World, anchor: Pose, radius: float, rng, clearance: int = 3) -> Pose:
    """Random level cell-centre pose within ``radius`` of ``anchor``."""
    from scipy import ndimage
    dist = ndimage.distance_transform_cdt(~world.blocked, metric="chessboard")
    rr, cc = np.nonzero(dist > clearance)
    xs, zs = (cc + 0.5) * world.cell_size, (rr + 0.5) * world.cell_size
    ok = np.hypot(xs - anchor.x, zs - anchor.z) <= radius
    if not ok.any():
        return anchor
    k = int(rng.integers(int(ok.sum())))
    yaw = float(rng.integers(12)) * math.radians(30.0)
    return Pose(xs[ok][k], world.camera_height, zs[ok][k], yaw, 0.0)

