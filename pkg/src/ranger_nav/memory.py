"""Keyframe memory bank: geometry + semantics + goal value per keyframe."""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree

from .config import MemoryConfig, ScaleConfig
from .geometry import PlanarTransform, PointCloud, Pose, rotation, visual_similarity
from .perception import Detection, Observation, category_embedding
from .scale import EstimationError, InsufficientDataError, MetricScale, estimate_scale
from .world import KNOWN_CATEGORIES

NO_DETECTION_VALUE = 0.05
ARCHIVE_VERSION = 1


class RelocalizationError(RuntimeError):
    pass


@dataclass(eq=False)
class Keyframe:
    id: int
    pose: Pose
    cloud: PointCloud
    detections: tuple
    value_score: float = NO_DETECTION_VALUE
    source: str = "live"

    def __eq__(self, other):
        if not isinstance(other, Keyframe):
            return NotImplemented
        return (self.id == other.id and self.pose == other.pose and self.cloud == other.cloud
                and self.detections == other.detections and self.value_score == other.value_score
                and self.source == other.source)


@dataclass(eq=False)
class MemoryBank:
    keyframes: list = field(default_factory=list)
    metric_scale: MetricScale = None
    voxel_size: float = 0.1
    scale_cfg: ScaleConfig = ScaleConfig()
    mem_cfg: MemoryConfig = MemoryConfig()
    goal: str = None
    meta: dict = field(default_factory=dict)
    _next_id: int = 0
    _trees: dict = field(default_factory=dict, repr=False)
    _scale_outliers: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.keyframes)

    def __eq__(self, other):
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return self.keyframes == other.keyframes and self.metric_scale == other.metric_scale

    @property
    def scale(self) -> float:
        """Units-to-metres multiplier, or None before the first estimate."""
        return None if self.metric_scale is None else self.metric_scale.scale

    def tree(self, kf: Keyframe) -> cKDTree:
        t = self._trees.get(kf.id)
        if t is None:
            t = self._trees[kf.id] = cKDTree(kf.cloud.points)
        return t

    def match_radius(self) -> float:
        return 2 * self.voxel_size / (self.scale or 1.0)


def _quantize(cloud: PointCloud) -> PointCloud:
    return PointCloud(cloud.points.astype(np.float32).astype(float),
                      cloud.confidences.astype(np.float32).astype(float))


def overlap_fraction(bank: MemoryBank, cloud: PointCloud) -> float:
    if not bank.keyframes or len(cloud) == 0:
        return 0.0
    tree = bank.tree(bank.keyframes[-1])
    d, _ = tree.query(cloud.points, distance_upper_bound=bank.match_radius())
    return float(np.isfinite(d).mean())


def _ground_fits(bank: MemoryBank, cloud, pose, seed: int) -> bool:
    try:
        estimate_scale(cloud, pose.position, bank.scale_cfg, seed=seed)
    except (EstimationError, InsufficientDataError):
        return False
    return True


def update_scale(bank: MemoryBank, kf: Keyframe) -> bool:
    """Re-estimate metric scale from one keyframe and blend it in (EMA).

    An estimate more than ``max_scale_jump`` away from the current scale is
    set aside (a furniture top taken for the floor); ``rescale_votes``
    consecutive set-aside estimates that agree with each other replace the
    current scale with their median instead.
    """
    cfg = bank.scale_cfg
    try:
        est = estimate_scale(kf.cloud, kf.pose.position, cfg, seed=kf.id)
    except (EstimationError, InsufficientDataError):
        return False
    cur = bank.metric_scale
    if cur is None:
        bank.metric_scale = est
        return True
    lim = 1.0 + cfg.max_scale_jump
    if not 1.0 / lim <= est.scale / cur.scale <= lim:
        votes = bank._scale_outliers = bank._scale_outliers[-(cfg.rescale_votes - 1):] + [est.scale]
        if len(votes) == cfg.rescale_votes and max(votes) / min(votes) <= lim:
            s = float(np.median(votes))
            bank.metric_scale = MetricScale(s, cur.h_real / s, cur.h_real)
            bank._scale_outliers = []
            return True
        return False
    bank._scale_outliers = []
    s = cfg.ema_alpha * est.scale + (1 - cfg.ema_alpha) * cur.scale
    bank.metric_scale = MetricScale(s, cur.h_real / s, cur.h_real)
    return True


def maybe_insert_keyframe(bank: MemoryBank, obs: Observation, pose: Pose = None,
                          omega_k: float = None, source: str = "live"):
    """Insert ``obs`` when it overlaps the latest keyframe by less than 1 - omega_k.

    While the bank has no scale yet, a redundant frame is still admitted if
    its ground plane fits, so the bank never stalls without a scale.
    Returns ``(inserted, keyframe_id or None)``.
    """
    omega_k = bank.mem_cfg.omega_k if omega_k is None else omega_k
    pose = obs.estimated_pose if pose is None else pose
    if bank.keyframes and overlap_fraction(bank, obs.cloud) >= 1.0 - omega_k:
        if bank.scale is not None or not _ground_fits(bank, obs.cloud, pose, bank._next_id):
            return False, None
    kf = Keyframe(bank._next_id, pose, _quantize(obs.cloud), tuple(obs.detections),
                  NO_DETECTION_VALUE, source)
    commit_keyframe(bank, kf)
    return True, kf.id


def commit_keyframe(bank: MemoryBank, kf: Keyframe) -> Keyframe:
    """Append an already-gated keyframe: score it, apply the optional cap and
    refresh the scale estimate. Replaying an archive through this function
    rebuilds the same bank state the live session had."""
    bank._next_id = max(bank._next_id, kf.id + 1)
    bank.keyframes.append(kf)
    if bank.goal is not None:
        kf.value_score = keyframe_value(kf, bank.goal)
    cap = bank.mem_cfg.max_keyframes
    if cap and len(bank.keyframes) > cap:
        victims = [k for k in bank.keyframes if k.source == "context"] or bank.keyframes
        old = victims[0]
        bank.keyframes.remove(old)
        bank._trees.pop(old.id, None)
    update_scale(bank, kf)
    return kf


def ingest_context_video(bank: MemoryBank, frames) -> int:
    """Feed an offline frame sequence through the novelty gate; returns #inserted.

    ``frames`` holds Observations or (Observation, Pose) pairs.
    """
    count = 0
    for item in frames:
        obs, pose = item if isinstance(item, tuple) else (item, None)
        inserted, _ = maybe_insert_keyframe(bank, obs, pose, source="context")
        count += inserted
    return count


def keyframe_value(kf: Keyframe, goal: str) -> float:
    if not kf.detections:
        return NO_DETECTION_VALUE
    emb = category_embedding(goal, len(kf.detections[0].feature))
    return max(visual_similarity(d.feature, emb) for d in kf.detections)


def score_keyframes(bank: MemoryBank, goal_category: str) -> MemoryBank:
    if goal_category not in KNOWN_CATEGORIES:
        raise ValueError(f"unknown category {goal_category!r}")
    bank.goal = goal_category
    for kf in bank.keyframes:
        kf.value_score = keyframe_value(kf, goal_category)
    return bank


# ---------------------------------------------------------------- relocalization

@dataclass(frozen=True)
class Relocalization:
    pose: Pose                  # observation pose in the bank frame
    keyframe_id: int
    inlier_ratio: float
    transform: PlanarTransform  # observation frame -> bank frame


def _local(points: np.ndarray, pose: Pose) -> np.ndarray:
    return (points - np.array([pose.x, pose.y, pose.z])) @ rotation(pose.yaw)


def _labels(n: int, detections) -> np.ndarray:
    lab = np.zeros(n, dtype=np.int64)
    for d in detections:
        lab[d.point_indices] = 1 + KNOWN_CATEGORIES.index(d.category) \
            if d.category in KNOWN_CATEGORIES else 99
    return lab


def _structure_mask(local: np.ndarray, floor_y: float, margin: float) -> np.ndarray:
    return local[:, 1] > floor_y + margin


def _range_descriptor(local: np.ndarray, rmax: float) -> np.ndarray:
    r = np.hypot(local[:, 0], local[:, 2])
    h, _ = np.histogram(r, bins=10, range=(0, rmax))
    return h / max(h.sum(), 1)


def _raster(pts2: np.ndarray, cell: float, half: int) -> np.ndarray:
    g = np.zeros((2 * half, 2 * half))
    ij = np.floor(pts2 / cell).astype(int) + half
    ok = (ij >= 0).all(1) & (ij < 2 * half).all(1)
    np.add.at(g, (ij[ok, 1], ij[ok, 0]), 1.0)
    return ndimage.gaussian_filter(np.minimum(g, 1.0), 1.0)


def _icp_2d(src, dst_tree, dst, theta, t, radius, iters=8):
    """Refine a planar rigid fit src -> dst (points in x, y, z; y is untouched)."""
    for _ in range(iters):
        moved = src @ rotation(theta).T + np.array([t[0], 0.0, t[1]])
        d, j = dst_tree.query(moved, distance_upper_bound=3 * radius)
        ok = np.isfinite(d)
        if ok.sum() < 3:
            break
        a = src[ok][:, [0, 2]]
        b = dst[j[ok]][:, [0, 2]]
        # points are (x, z) with yaw rotating x toward -z
        ma, mb = a.mean(0), b.mean(0)
        ac, bc = a - ma, b - mb
        sxx = (ac[:, 0] * bc[:, 0] + ac[:, 1] * bc[:, 1]).sum()
        sxy = (ac[:, 1] * bc[:, 0] - ac[:, 0] * bc[:, 1]).sum()
        theta = math.atan2(sxy, sxx)
        r2 = rotation(theta)[np.ix_([0, 2], [0, 2])]
        t = mb - r2 @ ma
    return theta, t


def relocalize(bank: MemoryBank, obs: Observation, min_inlier_ratio: float = None) -> Relocalization:
    """Place ``obs`` (expressed in its own session frame) in the bank's frame.

    Candidate keyframes are ranked by detected-category overlap, then by a
    range-histogram descriptor. For each, a yaw grid with FFT correlation of
    occupancy rasters seeds a planar ICP. Inliers are structure points (above
    the floor) lying within two voxels of a same-label keyframe point.
    """
    if not bank.keyframes:
        raise RelocalizationError("memory bank is empty")
    cfg = bank.mem_cfg
    min_inlier_ratio = cfg.min_inlier_ratio if min_inlier_ratio is None else min_inlier_ratio
    s = bank.scale or 1.0
    radius = bank.match_radius()
    h_cam = bank.scale_cfg.camera_height / s
    margin = 0.15 / s
    rmax = 5.5 / s

    o_pose = obs.estimated_pose
    o_loc = _local(obs.cloud.points, o_pose)
    o_lab = _labels(len(o_loc), obs.detections)
    keep = _structure_mask(o_loc, -h_cam, margin)
    o_loc, o_lab = o_loc[keep], o_lab[keep]
    if len(o_loc) < 10:
        raise RelocalizationError("observation has too little structure")
    o_desc = _range_descriptor(o_loc, rmax)
    o_cats = {d.category for d in obs.detections}

    ranked = []
    for kf in bank.keyframes:
        cats = {d.category for d in kf.detections}
        union = o_cats | cats
        jac = len(o_cats & cats) / len(union) if union else 1.0
        k_loc = _local(kf.cloud.points, kf.pose)
        desc = _range_descriptor(k_loc[_structure_mask(k_loc, -h_cam, margin)], rmax)
        ranked.append((-jac, float(np.abs(desc - o_desc).sum()), kf.id, kf))
    ranked.sort(key=lambda r: r[:3])

    cell = 0.1 / s
    half = int(math.ceil(rmax / cell))
    yaws = np.arange(0.0, 360.0, cfg.reloc_yaw_step_deg)
    best = (-1.0, None, None, None)
    for *_, kf in ranked[:cfg.reloc_top_k]:
        k_loc = _local(kf.cloud.points, kf.pose)
        k_lab = _labels(len(k_loc), kf.detections)
        km = _structure_mask(k_loc, -h_cam, margin)
        k_loc, k_lab = k_loc[km], k_lab[km]
        if len(k_loc) < 10:
            continue
        tree = cKDTree(k_loc)
        k_ras = _raster(k_loc[:, [0, 2]], cell, half)
        hyps = []
        for yd in yaws:
            th = math.radians(yd)
            rot = o_loc @ rotation(th).T
            o_ras = _raster(rot[:, [0, 2]], cell, half)
            corr = fftconvolve(k_ras, o_ras[::-1, ::-1], mode="full")
            i, j = np.unravel_index(int(np.argmax(corr)), corr.shape)
            t = np.array([(j - (2 * half - 1)) * cell, (i - (2 * half - 1)) * cell])
            hyps.append((float(corr[i, j]), th, t))
        hyps.sort(key=lambda h: -h[0])
        for _, th, t in hyps[:3]:
            th, t = _icp_2d(o_loc, tree, k_loc, th, t, radius)
            moved = o_loc @ rotation(th).T + np.array([t[0], 0.0, t[1]])
            d, j = tree.query(moved, distance_upper_bound=radius)
            ok = np.isfinite(d)
            ok[ok] &= k_lab[j[ok]] == o_lab[ok]
            ratio = float(ok.mean())
            if ratio > best[0]:
                best = (ratio, kf, th, t)

    ratio, kf, th, t = best
    if kf is None or not ratio > min_inlier_ratio:
        raise RelocalizationError(f"best inlier ratio {max(ratio, 0):.3f} <= {min_inlier_ratio}")
    p = np.array([kf.pose.x, kf.pose.y, kf.pose.z]) + rotation(kf.pose.yaw) @ np.array([t[0], 0.0, t[1]])
    pose = Pose(p[0], kf.pose.y, p[2], kf.pose.yaw + th, o_pose.pitch)
    xform = PlanarTransform.between(o_pose, pose)
    assert ratio > min_inlier_ratio
    return Relocalization(pose, kf.id, ratio, xform)


def _see_through(bank_pts, xform: PlanarTransform, centre, depth, margin) -> int:
    """Bank points that the sweep looked past (closer than the first hit on
    the same bearing)."""
    local = (bank_pts - np.array([xform.tx, 0.0, xform.tz])) @ rotation(xform.yaw) - centre
    az = np.arctan2(-local[:, 2], local[:, 0])
    bins = ((az + math.pi) / (2 * math.pi) * len(depth)).astype(int) % len(depth)
    return int((np.hypot(local[:, 0], local[:, 2]) < depth[bins] - margin).sum())


def _grid(pts2: np.ndarray, lo: np.ndarray, cell: float, shape) -> np.ndarray:
    g = np.zeros(shape)
    ij = np.floor((pts2 - lo) / cell).astype(int)
    ok = (ij >= 0).all(1) & (ij[:, 0] < shape[1]) & (ij[:, 1] < shape[0])
    g[ij[ok, 1], ij[ok, 0]] = 1.0
    return ndimage.gaussian_filter(g, 1.0)


def _global_hypotheses(live, bank_pts, cell, yaw_step_deg=5.0, top=6) -> list:
    """Correlate the whole sweep against the whole bank over a yaw grid; one
    peak per yaw, the ``top`` strongest returned as transforms."""
    lo = bank_pts[:, [0, 2]].min(0)
    n = np.floor((bank_pts[:, [0, 2]].max(0) - lo) / cell).astype(int) + 1
    b_ras = _grid(bank_pts[:, [0, 2]], lo, cell, (n[1], n[0]))
    peaks = []
    for yd in np.arange(0.0, 360.0, yaw_step_deg):
        th = math.radians(yd)
        q = (live @ rotation(th).T)[:, [0, 2]]
        qlo = q.min(0)
        m = np.floor((q.max(0) - qlo) / cell).astype(int) + 1
        corr = fftconvolve(b_ras, _grid(q, qlo, cell, (m[1], m[0]))[::-1, ::-1], mode="full")
        i, j = np.unravel_index(int(np.argmax(corr)), corr.shape)
        t = lo - qlo + np.array([j - (m[0] - 1), i - (m[1] - 1)]) * cell
        peaks.append((float(corr[i, j]), PlanarTransform(th, float(t[0]), float(t[1]))))
    peaks.sort(key=lambda p: -p[0])
    return [x for _, x in peaks[:top]]


def relocalize_sweep(bank: MemoryBank, sweep, seeds=(), probe_every: int = 3,
                     min_inlier_ratio: float = None, n_bearings: int = 180) -> Relocalization:
    """Place a turn-in-place sweep of observations in the bank frame.

    A single view of a bare wall fits many places in a bank equally well; a
    full turn does not. Hypotheses are the ``seeds`` (observation-frame ->
    bank-frame transforms) plus single-view relocalization of every
    ``probe_every``-th frame plus the best whole-sweep raster correlations
    over a yaw grid. Each is refined by planar ICP of the whole sweep
    against the bank's structure and scored by the fraction of sweep points
    with a bank neighbour, minus the wall points (above 1 m) the sweep saw
    past. The returned ``keyframe_id`` is -1.
    """
    if not bank.keyframes:
        raise RelocalizationError("memory bank is empty")
    sweep = list(sweep)
    if not sweep:
        raise RelocalizationError("empty sweep")
    min_inlier_ratio = bank.mem_cfg.min_inlier_ratio if min_inlier_ratio is None else min_inlier_ratio
    s = bank.scale or 1.0
    radius = bank.match_radius()
    floor_y = -bank.scale_cfg.camera_height / s
    band_y = (1.0 - bank.scale_cfg.camera_height) / s    # 1 m above the floor

    def structure(pts):
        return pts[_structure_mask(pts, floor_y, 0.15 / s)]

    bank_pts = structure(np.concatenate([kf.cloud.points - [0.0, kf.pose.y, 0.0]
                                         for kf in bank.keyframes]))
    live = structure(np.concatenate([o.cloud.points - [0.0, o.estimated_pose.y, 0.0]
                                     for o in sweep]))
    if len(bank_pts) < 10 or len(live) < 10:
        raise RelocalizationError("too little structure to match")
    tree = cKDTree(bank_pts)
    centre = sweep[0].estimated_pose.position - [0.0, sweep[0].estimated_pose.y, 0.0]
    walls = live[live[:, 1] > band_y] - centre
    depth = np.full(n_bearings, np.inf)
    az = np.arctan2(-walls[:, 2], walls[:, 0])
    np.minimum.at(depth, ((az + math.pi) / (2 * math.pi) * n_bearings).astype(int) % n_bearings,
                  np.hypot(walls[:, 0], walls[:, 2]))
    depth[np.isinf(depth)] = 0.0    # no return on that bearing: nothing was seen past
    bank_walls = bank_pts[bank_pts[:, 1] > band_y]

    hyps = list(seeds)
    first = probe_every if hyps else 0     # a seed usually comes from frame 0
    for k in range(first, len(sweep), probe_every):
        try:
            hyps.append(relocalize(bank, sweep[k], min_inlier_ratio).transform)
        except RelocalizationError:
            pass
    hyps += _global_hypotheses(live, bank_pts, 0.2 / s)
    best = None
    for x in hyps:
        th, t = _icp_2d(live, tree, bank_pts, x.yaw, np.array([x.tx, x.tz]), radius)
        x = PlanarTransform(th, float(t[0]), float(t[1]))
        d, _ = tree.query(x.apply_points(live), distance_upper_bound=radius)
        ratio = float(np.isfinite(d).mean())
        score = ratio - _see_through(bank_walls, x, centre, depth, 3 * radius) / len(live)
        if best is None or score > best[0]:
            best = (score, ratio, x)
    if best is None or not best[1] > min_inlier_ratio:
        raise RelocalizationError("no sweep hypothesis passes the inlier ratio")
    _, ratio, x = best
    return Relocalization(x.apply_pose(sweep[0].estimated_pose), -1, ratio, x)


def transform_observation(obs: Observation, xform: PlanarTransform) -> Observation:
    cloud = PointCloud(xform.apply_points(obs.cloud.points), obs.cloud.confidences)
    return Observation(cloud, xform.apply_pose(obs.estimated_pose), obs.detections, obs.frame_id)


# ---------------------------------------------------------------- archive

def save_bank(bank: MemoryBank, path, meta: dict = None):
    """Zip archive: ``index.json`` plus one little-endian float32 blob per keyframe
    (N xyz triplets followed by N confidences)."""
    index = {
        "version": ARCHIVE_VERSION,
        "voxel_size": bank.voxel_size,
        "metric_scale": None if bank.metric_scale is None else [
            bank.metric_scale.scale, bank.metric_scale.h_ground, bank.metric_scale.h_real],
        "next_id": bank._next_id,
        "meta": {**bank.meta, **(meta or {})},
        "keyframes": [],
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for kf in bank.keyframes:
            name = f"kf_{kf.id:06d}.bin"
            buf = io.BytesIO()
            buf.write(kf.cloud.points.astype("<f4").tobytes())
            buf.write(kf.cloud.confidences.astype("<f4").tobytes())
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())
            index["keyframes"].append({
                "id": kf.id, "pose": kf.pose.to_list(), "source": kf.source,
                "value_score": kf.value_score, "n_points": len(kf.cloud), "blob": name,
                "detections": [{
                    "category": d.category,
                    "point_indices": d.point_indices.tolist(),
                    "detector_confidence": d.detector_confidence,
                    "feature": d.feature.tolist(),
                } for d in kf.detections],
            })
        info = zipfile.ZipInfo("index.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(index, indent=1, sort_keys=True))


def load_bank(path, scale_cfg: ScaleConfig = ScaleConfig(),
              mem_cfg: MemoryConfig = MemoryConfig()) -> MemoryBank:
    with zipfile.ZipFile(path) as zf:
        index = json.loads(zf.read("index.json"))
        if index.get("version") != ARCHIVE_VERSION:
            raise ValueError(f"unsupported bank archive version {index.get('version')}")
        ms = index["metric_scale"]
        bank = MemoryBank(metric_scale=None if ms is None else MetricScale(*ms),
                          voxel_size=index["voxel_size"], scale_cfg=scale_cfg, mem_cfg=mem_cfg,
                          meta=index.get("meta", {}))
        bank._next_id = index["next_id"]
        for e in index["keyframes"]:
            raw = np.frombuffer(zf.read(e["blob"]), dtype="<f4").astype(float)
            n = e["n_points"]
            cloud = PointCloud(raw[:3 * n].reshape(n, 3), raw[3 * n:4 * n])
            dets = tuple(Detection(d["category"], np.array(d["point_indices"], dtype=np.int64),
                                   d["detector_confidence"], np.array(d["feature"]))
                         for d in e["detections"])
            bank.keyframes.append(Keyframe(e["id"], Pose.from_list(e["pose"]), cloud, dets,
                                           e["value_score"], e["source"]))
    return bank


def retag(bank: MemoryBank, source: str) -> MemoryBank:
    """Copy of ``bank`` with every keyframe's source set; the input is untouched."""
    return replace(bank, keyframes=[replace(k, source=source) for k in bank.keyframes],
                   meta=dict(bank.meta), _trees={})
