"""The perception-planning-action loop of one navigating agent."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import Config
from .fmm import NoPathError, check_stop, extract_path, fmm_solve, next_action, traversal_cost
from .fusion import AssociationParams, ObjectStore, fuse_keyframe, query_goal_objects
from .geometry import Pose, heading
from .maps import MapBuilder, detect_frontiers, world_to_cell
from .memory import (MemoryBank, RelocalizationError, commit_keyframe, maybe_insert_keyframe,
                     relocalize, relocalize_sweep, retag, score_keyframes,
                     transform_observation)
from .perception import DriftState, observe
from .planner import (FRONTIER, Blacklist, candidate_waypoints, open_frontiers,
                      report_unreachable,
                      score_all, select_waypoint)
from .world import TURN_ANGLE, Action, World, step_dynamics

FULL_TURN = round(2 * math.pi / TURN_ANGLE)    # turn actions in a full circle


@dataclass
class Plan:
    waypoint: object
    target_xz: tuple    # metres, map frame (stable across raster growth)
    since: int
    radius: int = None  # inflation the plan was made with


class Navigator:
    """Owns every piece of mutable episode state.

    ``pose`` is the true pose; everything the agent decides with lives in the
    map frame (the bank frame in metres).
    """

    def __init__(self, world: World, goal: str, start: Pose, cfg: Config = Config(), seed: int = 0):
        self.world = world
        self.goal = goal
        self.cfg = cfg
        self.pose = start
        self.rng = np.random.default_rng(seed)
        self.drift = DriftState(start)
        self.frame = 0
        self.bank = MemoryBank(voxel_size=cfg.fusion.voxel_size, scale_cfg=cfg.scale,
                               mem_cfg=cfg.memory)
        score_keyframes(self.bank, goal)
        self.store = ObjectStore(AssociationParams.from_config(cfg.fusion))
        pc = cfg.perception
        self.builder = MapBuilder(cfg.maps.cell_size, (cfg.maps.height_low, cfg.maps.height_high),
                                  cfg.scale.camera_height, cfg.fusion.point_confidence,
                                  cfg.maps.margin_cells, sweep=True,
                                  sweep_bin_deg=pc.hfov_deg / pc.n_cols, max_range=pc.max_range)
        self.xform = None
        self.context_status = "none"
        self.blacklist = Blacklist(radius=cfg.planner.blacklist_radius_cells,
                                   ttl=cfg.planner.blacklist_ttl)
        self.plan = None
        self.collisions = 0
        self.bumps = []          # map-frame points where forward motion was refused
        self.spin_left = FULL_TURN if cfg.planner.initial_spin else 0
        self.no_scale_turns = 0
        self._fused = set()
        self._sweep = None       # raw frames held back while a context placement is confirmed
        self.est_pose = None
        self.maps = None
        self.actions = []
        self.trajectory = [start]
        self.est_trajectory = []
        self.path_length = 0.0
        self.done = False
        self.status = None

    # ---------------------------------------------------------------- memory

    def add_keyframe(self, kf):
        commit_keyframe(self.bank, kf)
        self._fuse_pending()

    def _fuse_pending(self):
        """Fuse keyframes that arrived while no scale was known, in bank order."""
        if self.bank.scale is None:
            return
        for kf in self.bank.keyframes:
            if kf.id not in self._fused:
                fuse_keyframe(self.store, kf, self.bank.scale, self.cfg.fusion.point_confidence)
                self._fused.add(kf.id)

    def load_context(self, ctx_bank: MemoryBank):
        """Replay a recorded bank, then place the live session inside it."""
        for kf in retag(ctx_bank, "context").keyframes:
            self.add_keyframe(kf)
        obs = observe(self.world, self.pose, self.drift, self.frame, self.cfg.perception)
        try:
            rel = relocalize(self.bank, obs)
        except RelocalizationError:
            self._drop_context()
            self.context_status = "reloc_failed"
            return None
        self.xform = rel.transform
        self.context_status = "relocalized"
        if self.cfg.memory.reloc_sweep:
            self._sweep = []
        elif query_goal_objects(self.store, self.goal, self.cfg.planner.theta_obj):
            self.spin_left = 0
        return rel

    def _settle_context(self):
        """End of the confirming turn: pick the placement that fits the whole
        sweep, then insert the held-back frames under it."""
        sweep, self._sweep = self._sweep, None
        try:
            self.xform = relocalize_sweep(self.bank, sweep, seeds=[self.xform]).transform
        except RelocalizationError:
            self._drop_context()
            self.context_status = "reloc_failed"
        for raw in sweep:
            obs = raw if self.xform is None else transform_observation(raw, self.xform)
            maybe_insert_keyframe(self.bank, obs)
            self._fuse_pending()
        self.spin_left = 0

    def _drop_context(self):
        cfg = self.cfg
        self.bank = MemoryBank(voxel_size=cfg.fusion.voxel_size, scale_cfg=cfg.scale,
                               mem_cfg=cfg.memory)
        score_keyframes(self.bank, self.goal)
        self.store = ObjectStore(AssociationParams.from_config(cfg.fusion))
        self._fused = set()
        self.xform = None

    # ---------------------------------------------------------------- loop

    def observe(self):
        obs = observe(self.world, self.pose, self.drift, self.frame, self.cfg.perception)
        if self._sweep is not None:
            self._sweep.append(obs)
            if len(self._sweep) < FULL_TURN:
                return None
            self._settle_context()
            return obs if self.xform is None else transform_observation(obs, self.xform)
        if self.xform is not None:
            obs = transform_observation(obs, self.xform)
        maybe_insert_keyframe(self.bank, obs)
        self._fuse_pending()
        return obs

    def decide(self, obs) -> Action:
        pc = self.cfg.planner
        if self.bank.scale is None:
            self.no_scale_turns += 1
            if self.no_scale_turns > FULL_TURN and obs.estimated_pose.pitch > -math.radians(31):
                return Action.LOOK_DOWN     # more floor in view
            return Action.TURN_LEFT
        self.est_pose = obs.estimated_pose.scaled(self.bank.scale)
        self.est_trajectory.append(self.est_pose)
        self.maps = maps = self.builder.update(self.bank).maps()
        goal_objs = query_goal_objects(self.store, self.goal)
        if check_stop(self.est_pose, goal_objs, maps, pc.stop_radius, pc.theta_obj, pc.unknown_speed):
            return Action.STOP
        if self.spin_left > 0:
            if any(o.confidence >= pc.theta_obj for o in goal_objs):
                self.spin_left = 0
            else:
                self.spin_left -= 1
                return Action.TURN_LEFT
        return self._navigate(maps, goal_objs)

    def _cost_at(self, maps, agent_cell, radius):
        pc = self.cfg.planner
        cost = traversal_cost(maps, radius, pc.unknown_speed, keep_free=agent_cell)
        for bx, bz in self.bumps:
            ix, iz = world_to_cell(maps.spec, (bx, bz))
            if maps.in_bounds((ix, iz)) and (ix, iz) != tuple(agent_cell):
                cost[iz, ix] = np.inf
        return cost

    def _costs(self, maps, agent_cell):
        """Yield (inflation radius, traversal cost), most clearance first.

        Radii that seal the agent into a small pocket (narrow gaps on a grid
        rotated against the walls) are skipped; the smaller radii that follow
        are fallbacks for when nothing is reachable with full clearance.
        """
        pc = self.cfg.planner
        found, best = False, None
        for radius in range(pc.inflate_radius, -1, -1):
            cost = self._cost_at(maps, agent_cell, radius)
            if found:
                yield radius, cost
                continue
            lab, _ = ndimage.label(np.isfinite(cost))
            room = int((lab == lab[agent_cell[1], agent_cell[0]]).sum())
            if room >= pc.escape_cells:
                found = True
                yield radius, cost
            elif best is None or room > best[0]:
                best = (room, radius, cost)
        if not found:
            yield best[1], best[2]

    def _replan(self, maps, goal_objs, agent_cell, cost, radius=None):
        pc = self.cfg.planner
        frontiers = open_frontiers(maps, detect_frontiers(maps, self.cfg.maps.min_frontier_size),
                                   pc.pocket_cells)
        passable = np.isfinite(cost)
        cands = candidate_waypoints(goal_objs, frontiers, maps, passable)
        field = fmm_solve(maps, [agent_cell], cost=cost)
        cands = score_all(cands, maps, field, pc)
        wp = select_waypoint(cands, self.blacklist, self.frame, field, pc.theta_obj)
        if wp is None:
            self.plan = None
            return None
        s = maps.spec
        xz = (s.origin_x + (wp.target_cell[0] + 0.5) * s.cell_size,
              s.origin_z + (wp.target_cell[1] + 0.5) * s.cell_size)
        self.plan = Plan(wp, xz, self.frame, radius)
        self.collisions = 0
        return self.plan

    def _stale(self, maps, goal_objs) -> bool:
        pc = self.cfg.planner
        p = self.plan
        if p is None or self.frame - p.since >= pc.replan_every:
            return True
        if p.waypoint.kind == FRONTIER and any(o.confidence >= pc.theta_obj for o in goal_objs):
            return True
        if self.blacklist.contains(p.waypoint, self.frame):
            return True
        if p.waypoint.kind == FRONTIER:
            cell = world_to_cell(maps.spec, p.target_xz)
            if not maps.in_bounds(cell) or not maps.unknown[
                    max(cell[1] - 1, 0):cell[1] + 2, max(cell[0] - 1, 0):cell[0] + 2].any():
                return True
        return False

    def _navigate(self, maps, goal_objs) -> Action:
        agent_cell = world_to_cell(maps.spec, (self.est_pose.x, self.est_pose.z))
        for radius, cost in self._costs(maps, agent_cell):
            p = self.plan
            if p is not None and p.radius is not None and radius > p.radius \
                    and not self._stale(maps, goal_objs):
                continue    # keep following a plan made with less clearance
            action = self._follow(maps, goal_objs, agent_cell, cost, radius)
            if action is not None:
                return action
        return None

    def _follow(self, maps, goal_objs, agent_cell, cost, radius):
        """Next action toward the current (or a fresh) waypoint; None when
        nothing is reachable under ``cost``."""
        pc = self.cfg.planner
        for _ in range(8):
            if self._stale(maps, goal_objs):
                if self._replan(maps, goal_objs, agent_cell, cost, radius) is None:
                    return None
            target = world_to_cell(maps.spec, self.plan.target_xz)
            try:
                field = fmm_solve(maps, [target], cost=cost, stop_cell=agent_cell)
                path = extract_path(field, agent_cell)
            except NoPathError:
                self._give_up()
                continue
            if len(path.cells) - 1 <= pc.reach_cells:
                # arrived without the waypoint resolving itself
                self._give_up()
                continue
            return next_action(path, self.est_pose, maps.spec, np.isfinite(cost),
                               pc.subgoal_dist, pc.heading_tol_deg)
        return Action.TURN_LEFT

    def _give_up(self):
        self.blacklist = report_unreachable(self.blacklist, self.plan.waypoint, self.frame)
        self.plan = None

    def act(self, action: Action):
        new, collided = step_dynamics(self.world, self.pose, action)
        self.path_length += math.hypot(new.x - self.pose.x, new.z - self.pose.z)
        self.pose = new
        self.actions.append(action)
        self.trajectory.append(new)
        if action is Action.MOVE_FORWARD:
            if collided:
                self.collisions += 1
                if self.est_pose is not None:
                    h = heading(self.est_pose.yaw)
                    self.bumps.append((self.est_pose.x + 0.15 * h[0], self.est_pose.z + 0.15 * h[1]))
                if self.plan is not None and self.collisions >= self.cfg.planner.collision_limit:
                    self._give_up()
                    self.collisions = 0
            else:
                self.collisions = 0
        self.drift = self.drift.advance(self.rng, self.cfg.perception)
        self.frame += 1

    def step(self) -> Action:
        obs = self.observe()
        action = Action.TURN_LEFT if obs is None else self.decide(obs)
        if action is None:
            self.done, self.status = True, "explored_out"
            return None
        self.act(action)
        if action is Action.STOP:
            self.done = True
        return action

