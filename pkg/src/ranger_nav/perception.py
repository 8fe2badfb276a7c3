"""Synthetic perception: ray-cast point clouds, drifting pose, object detections.

This stands in for a monocular dense-SLAM + open-vocabulary detector stack.
Its output has the same shape as the real thing: clouds in an arbitrarily
scaled frame anchored at the session's first pose, per-point confidences
above 1, a pose estimate that wanders, and detections carrying a mask (point
indices) and an embedding.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .config import PerceptionConfig
from .geometry import PointCloud, Pose, rotation
from .world import KNOWN_CATEGORIES, World, check_free


@dataclass(frozen=True, eq=False)
class Detection:
    category: str
    point_indices: np.ndarray
    detector_confidence: float
    feature: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.point_indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise ValueError("detection mask is empty")
        object.__setattr__(self, "point_indices", idx)
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return (self.category == other.category
                and np.array_equal(self.point_indices, other.point_indices)
                and self.detector_confidence == other.detector_confidence
                and np.array_equal(self.feature, other.feature))


@dataclass(frozen=True, eq=False)
class Observation:
    cloud: PointCloud
    estimated_pose: Pose
    detections: tuple
    frame_id: int = 0

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (self.cloud == other.cloud and self.estimated_pose == other.estimated_pose
                and self.detections == other.detections and self.frame_id == other.frame_id)


@dataclass(frozen=True)
class DriftState:
    """Session anchor (true pose where the perception frame was initialised)
    plus the accumulated planar pose error in metres / radians."""

    anchor: Pose
    dx: float = 0.0
    dz: float = 0.0
    dyaw: float = 0.0

    def advance(self, rng, cfg: PerceptionConfig = PerceptionConfig()) -> "DriftState":
        p = cfg.drift_pullback
        n = rng.normal(size=3)
        return DriftState(
            self.anchor,
            p * self.dx + cfg.drift_pos_std * n[0],
            p * self.dz + cfg.drift_pos_std * n[1],
            p * self.dyaw + math.radians(cfg.drift_yaw_std_deg) * n[2],
        )


def category_embedding(category: str, dim: int = 32) -> np.ndarray:
    rng = np.random.default_rng(zlib.crc32(category.encode()))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def estimated_pose_metric(true_pose: Pose, drift: DriftState) -> Pose:
    """Pose in the session frame, metres (before the arbitrary scale)."""
    a = drift.anchor
    d = true_pose.position - a.position
    rel = rotation(-a.yaw) @ d
    return Pose(rel[0] + drift.dx, rel[1], rel[2] + drift.dz,
                true_pose.yaw - a.yaw + drift.dyaw, true_pose.pitch)


@dataclass(frozen=True, eq=False)
class RayHits:
    points: np.ndarray       # true world coordinates, (N, 3)
    quality: np.ndarray      # q in [0, 1]
    object_ids: np.ndarray   # index into world.objects, -1 for walls / floor
    azimuth: np.ndarray      # horizontal angle relative to the camera, radians


def _ray_directions(cfg: PerceptionConfig) -> np.ndarray:
    th = math.tan(math.radians(cfg.hfov_deg) / 2)
    tv = math.tan(math.radians(cfg.vfov_deg) / 2)
    u = (np.arange(cfg.n_cols) + 0.5) / cfg.n_cols * 2 - 1
    v = (np.arange(cfg.n_rows) + 0.5) / cfg.n_rows * 2 - 1
    vv, uu = np.meshgrid(v[::-1], u[::-1], indexing="ij")
    d = np.stack([np.ones_like(uu), vv * tv, -uu * th], -1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def raycast(world: World, pose: Pose, cfg: PerceptionConfig = PerceptionConfig()) -> RayHits:
    """Cast the camera's ray fan into the 2.5-D world.

    Rays are marched in horizontal steps of ``cfg.ray_step``; the first sample
    below a cell's height (walls are unbounded) or below the floor ends a ray.
    Floor hits are placed exactly; block hits at the first sample inside.
    With level pitch every image column shares one horizontal track, so cell
    lookups are done per column and broadcast over rows.
    """
    d_cam = _ray_directions(cfg)
    d = d_cam @ pose.rotation().T
    hn = np.hypot(d[:, 0], d[:, 2])
    n_rays = len(d)
    if pose.pitch == 0.0:
        n_groups = cfg.n_cols
        group = np.tile(np.arange(n_groups), cfg.n_rows)
    else:
        n_groups = n_rays
        group = np.arange(n_rays)
    first = np.unique(group, return_index=True)[1]
    hn_g = np.maximum(hn[first], 1e-12)
    ux, uz = d[first, 0] / hn_g, d[first, 2] / hn_g
    slope = d[:, 1] / np.maximum(hn, 1e-12)
    stretch = np.sqrt(1 + slope ** 2)
    s_max = np.where(hn > 1e-9, cfg.max_range / stretch, 0.0)

    n_s = int(math.ceil(cfg.max_range / cfg.ray_step))
    s = np.arange(1, n_s + 1) * cfg.ray_step
    cs = world.cell_size
    H, W = world.shape
    rr = np.floor((pose.z + s[None, :] * uz[:, None]) / cs).astype(np.int64)
    cc = np.floor((pose.x + s[None, :] * ux[:, None]) / cs).astype(np.int64)
    outside = (rr < 0) | (rr >= H) | (cc < 0) | (cc >= W)
    np.clip(rr, 0, H - 1, out=rr)
    np.clip(cc, 0, W - 1, out=cc)
    height = np.where(outside, np.inf, world.height_map[rr, cc])
    # nothing is visible past the first wall of a track
    wall = np.isinf(height)
    k_wall = np.where(wall.any(1), wall.argmax(1), n_s - 1)
    n_keep = int(k_wall.max()) + 1
    height = height[:, :n_keep]
    sk = s[:n_keep]

    if pose.pitch == 0.0:
        ys = pose.y + sk[None, None, :] * slope.reshape(cfg.n_rows, cfg.n_cols)[:, :, None]
        block = (ys < height[None, :, :]).reshape(n_rays, n_keep)
    else:
        block = pose.y + sk[None, :] * slope[:, None] < height
    block &= sk[None, :] <= s_max[:, None]
    any_block = block.any(1)
    k_block = np.where(any_block, block.argmax(1), n_s)
    s_block = np.where(any_block, (k_block + 1) * cfg.ray_step, np.inf)
    with np.errstate(divide="ignore"):
        s_floor = np.where(slope < 0, pose.y / -np.minimum(slope, -1e-12), np.inf)
    s_floor = np.where(s_floor <= s_max, s_floor, np.inf)
    floor_first = s_floor < s_block
    hit = floor_first | any_block
    s_hit = np.where(floor_first, s_floor, s_block)

    idx = np.nonzero(hit)[0]
    g = group[idx]
    sh = s_hit[idx]
    pts = np.stack([pose.x + sh * ux[g], pose.y + sh * slope[idx], pose.z + sh * uz[g]], 1)
    is_floor = floor_first[idx]
    pts[is_floor, 1] = 0.0
    rng3 = sh * stretch[idx]

    # incidence: floor normal is +y; block faces from the entry step
    cos_inc = np.empty(len(idx))
    cos_inc[is_floor] = np.abs(d[idx[is_floor], 1])
    b = idx[~is_floor]
    gb = group[b]
    kb = k_block[b]
    prev = np.maximum(kb - 1, 0)
    same = (rr[gb, kb] == rr[gb, prev]) & (cc[gb, kb] == cc[gb, prev]) & (kb > 0)
    col_change = cc[gb, kb] != cc[gb, prev]
    cos_inc[~is_floor] = np.where(same, np.abs(d[b, 1]),
                                  np.where(col_change, np.abs(d[b, 0]), np.abs(d[b, 2])))
    q = np.clip((1 - (rng3 / cfg.max_range) ** 2) * (0.25 + 0.75 * cos_inc), 0.0, 1.0)

    obj = np.full(len(idx), -1, dtype=np.int64)
    inside = ~outside[gb, kb]
    obj[~is_floor] = np.where(inside, world.object_index[rr[gb, kb], cc[gb, kb]], -1)
    az = np.arctan2(-d_cam[idx, 2], d_cam[idx, 0])
    return RayHits(pts, q, obj, az)


def observe(world: World, true_pose: Pose, drift: DriftState, frame_id: int = 0,
            cfg: PerceptionConfig = PerceptionConfig()) -> Observation:
    check_free(world, true_pose)
    hits = raycast(world, true_pose, cfg)
    sigma = world.scale_factor
    est = estimated_pose_metric(true_pose, drift)
    r = rotation(est.yaw - true_pose.yaw)
    local = hits.points - true_pose.position
    pts = (est.position + local @ r.T) / sigma
    cloud = PointCloud(pts, 1.0 + 10.0 * hits.quality)

    rng = np.random.default_rng([world.seed, frame_id, 7919])
    col_step = math.radians(cfg.hfov_deg) / cfg.n_cols
    dets = []
    for k in np.unique(hits.object_ids[hits.object_ids >= 0]):
        sel = np.nonzero(hits.object_ids == k)[0]
        az = hits.azimuth[sel]
        if az.max() - az.min() + col_step < math.radians(cfg.min_subtend_deg):
            continue
        cat = world.objects[k].category
        dets.append(_make_detection(cat, sel, hits.quality[sel], rng, cfg))
    if cfg.false_positive_rate > 0 and rng.random() < cfg.false_positive_rate:
        walls = np.nonzero(hits.object_ids < 0)[0]
        if len(walls) >= 4:
            start = int(rng.integers(len(walls) - 3))
            cat = KNOWN_CATEGORIES[int(rng.integers(len(KNOWN_CATEGORIES)))]
            dets.append(_make_detection(cat, walls[start:start + 4], hits.quality[walls[start:start + 4]],
                                        rng, cfg))
    return Observation(cloud, est.scaled(1.0 / sigma), tuple(dets), frame_id)


def _make_detection(cat, sel, q, rng, cfg):
    f = category_embedding(cat, cfg.feature_dim) + rng.normal(0.0, cfg.feature_noise, cfg.feature_dim)
    f /= np.linalg.norm(f)
    conf = float(np.clip(0.5 + 0.5 * q.mean(), 0.0, 1.0))
    return Detection(cat, sel, conf, f)
