"""Persistent semantic object store built from per-keyframe detections."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import FusionConfig
from .geometry import (PointCloud, VoxelSet, pack_voxel_indices, visual_similarity, voxel_iou,
                       voxelize)


@dataclass(frozen=True)
class AssociationParams:
    w1: float = 0.5
    w2: float = 0.5
    tau: float = 0.55
    voxel_size: float = 0.1

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or not self.w1 + self.w2 > 0:
            raise ValueError("weights must be non-negative with a positive sum")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")

    @classmethod
    def from_config(cls, cfg: FusionConfig) -> "AssociationParams":
        return cls(cfg.w1, cfg.w2, cfg.tau, cfg.voxel_size)


def _voxel_cloud(voxels: VoxelSet, cloud: PointCloud) -> PointCloud:
    """One point per voxel (its centre), carrying the best confidence seen there."""
    if len(cloud) == 0:
        return PointCloud.empty()
    idx = np.floor(cloud.points / voxels.voxel_size).astype(np.int64)
    pos = np.searchsorted(voxels.keys, pack_voxel_indices(idx))
    conf = np.zeros(len(voxels))
    np.maximum.at(conf, pos, cloud.confidences)
    return PointCloud(voxels.centers(), conf)


@dataclass(frozen=True, eq=False)
class SemanticObject:
    id: int
    category_votes: dict
    cloud: PointCloud
    mean_feature: np.ndarray
    detection_count: int
    voxels: VoxelSet

    @property
    def category(self) -> str:
        # ties resolved alphabetically so the majority is order independent
        return min(self.category_votes, key=lambda c: (-self.category_votes[c], c))

    @property
    def confidence(self) -> float:
        return self.category_votes[self.category] / self.detection_count

    @property
    def centroid(self) -> np.ndarray:
        return self.cloud.points.mean(0)

    @classmethod
    def create(cls, oid: int, cloud: PointCloud, feature, category: str, voxel_size: float):
        vox = voxelize(cloud, voxel_size)
        return cls(oid, {category: 1}, _voxel_cloud(vox, cloud),
                   np.asarray(feature, dtype=float).copy(), 1, vox)


def filter_confident_points(obs, det, threshold: float = 1.9, scale: float = 1.0) -> PointCloud:
    """Points of ``det`` whose confidence exceeds ``threshold``, in metres.

    ``obs`` is anything with a ``cloud`` already expressed in the map frame
    (an Observation or a Keyframe). An empty result means the detection
    carries no usable geometry and must be skipped.
    """
    sub = obs.cloud.subset(det.point_indices)
    keep = sub.confidences > threshold
    return PointCloud(sub.points[keep] * scale, sub.confidences[keep])


def association_score(existing: SemanticObject, new_cloud: PointCloud, new_feature,
                      p: AssociationParams, new_voxels: VoxelSet = None) -> float:
    s_vis = visual_similarity(existing.mean_feature, new_feature)
    vox = new_voxels if new_voxels is not None else voxelize(new_cloud, p.voxel_size)
    s_geo = voxel_iou(existing.voxels, vox)
    return p.w1 * s_vis + p.w2 * s_geo


def associate(store, new_cloud: PointCloud, new_feature, category: str,
              p: AssociationParams):
    """Id of the best-scoring object, or None when the store is empty or the
    best score falls below tau. Ties go to the lowest id."""
    if not store:
        return None
    vox = voxelize(new_cloud, p.voxel_size)
    best_id, best = None, -np.inf
    for ob in sorted(store, key=lambda o: o.id):
        s = association_score(ob, new_cloud, new_feature, p, vox)
        if s > best:
            best_id, best = ob.id, s
    if best < p.tau:
        return None
    assert best >= p.tau
    return best_id


def fuse(obj: SemanticObject, new_cloud: PointCloud, new_feature, category: str) -> SemanticObject:
    n = obj.detection_count
    vox = obj.voxels.union(voxelize(new_cloud, obj.voxels.voxel_size))
    merged = _voxel_cloud(vox, obj.cloud.concat(new_cloud))
    votes = dict(obj.category_votes)
    votes[category] = votes.get(category, 0) + 1
    mean = (n * obj.mean_feature + np.asarray(new_feature, dtype=float)) / (n + 1)
    return replace(obj, category_votes=votes, cloud=merged, mean_feature=mean,
                   detection_count=n + 1, voxels=vox)


def query_goal_objects(store, goal_category: str, min_confidence: float = 0.0) -> list:
    hits = [o for o in store if o.category == goal_category and o.confidence >= min_confidence]
    return sorted(hits, key=lambda o: (-o.confidence * o.detection_count, o.id))


@dataclass
class ObjectStore:
    params: AssociationParams = field(default_factory=AssociationParams)
    objects: list = field(default_factory=list)
    next_id: int = 0

    def __iter__(self):
        return iter(self.objects)

    def __len__(self):
        return len(self.objects)

    def get(self, oid: int) -> SemanticObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def add(self, cloud: PointCloud, feature, category: str) -> int:
        """Associate-or-create; returns the id the detection ended up in."""
        if len(cloud) == 0:
            raise ValueError("detections without geometry are not fused")
        oid = associate(self.objects, cloud, feature, category, self.params)
        if oid is None:
            oid = self.next_id
            self.next_id += 1
            self.objects.append(SemanticObject.create(oid, cloud, feature, category,
                                                      self.params.voxel_size))
            return oid
        k = next(i for i, o in enumerate(self.objects) if o.id == oid)
        self.objects[k] = fuse(self.objects[k], cloud, feature, category)
        return oid


def fuse_keyframe(store: ObjectStore, kf, scale: float, point_confidence: float = 1.9) -> list:
    """Fold every detection of one keyframe into ``store``; returns the ids
    touched (None for detections with no confident points)."""
    ids = []
    for det in kf.detections:
        cloud = filter_confident_points(kf, det, point_confidence, scale)
        ids.append(store.add(cloud, det.feature, det.category) if len(cloud) else None)
    return ids
