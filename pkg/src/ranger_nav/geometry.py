"""Geometric primitives shared by every stage of the pipeline.

Frames are y-up and right-handed. Yaw rotates about +y, so a positive yaw
turns +x toward -z (counter-clockwise seen from above, i.e. "turn left").
Pitch rotates about the camera's lateral axis; positive pitch looks up.
A camera with yaw=0, pitch=0 looks along +x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_TWO_PI = 2.0 * math.pi
_KEY_OFFSET = 1 << 20
_KEY_BITS = 21


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, _TWO_PI)
    if a <= -math.pi:
        a += _TWO_PI
    return a


def rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation R_y(yaw) @ R_z(pitch)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    return ry @ rz


def heading(yaw: float) -> np.ndarray:
    """Unit planar direction (x, z) the camera faces at this yaw."""
    return np.array([math.cos(yaw), -math.sin(yaw)])


def bearing(dx: float, dz: float) -> float:
    """Yaw that faces the planar offset (dx, dz)."""
    return math.atan2(-dz, dx)


@dataclass(frozen=True)
class Pose:
    """4-DoF camera pose: position, yaw about +y, pitch about the lateral axis."""

    x: float
    y: float
    z: float
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        vals = tuple(float(v) for v in (self.x, self.y, self.z, self.yaw, self.pitch))
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose component in {vals}")
        for name, v in zip(("x", "y", "z", "pitch"), vals[:3] + vals[4:]):
            object.__setattr__(self, name, v)
        object.__setattr__(self, "yaw", normalize_angle(vals[3]))
        if not -math.pi / 2 <= self.pitch <= math.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def planar(self) -> np.ndarray:
        return np.array([self.x, self.z])

    def rotation(self) -> np.ndarray:
        return rotation(self.yaw, self.pitch)

    def with_(self, **kw) -> "Pose":
        vals = dict(x=self.x, y=self.y, z=self.z, yaw=self.yaw, pitch=self.pitch)
        vals.update(kw)
        return Pose(**vals)

    def scaled(self, s: float) -> "Pose":
        return Pose(self.x * s, self.y * s, self.z * s, self.yaw, self.pitch)

    def inverse(self) -> "Pose":
        """Pose whose transform undoes this one (exact for pitch == 0)."""
        if self.pitch != 0.0:
            raise ValueError("inverse is only defined for level poses")
        r = rotation(self.yaw)
        t = -(r.T @ self.position)
        return Pose(t[0], t[1], t[2], -self.yaw, 0.0)

    def to_list(self) -> list:
        return [self.x, self.y, self.z, self.yaw, self.pitch]

    @classmethod
    def from_list(cls, v) -> "Pose":
        return cls(*[float(a) for a in v])


@dataclass(frozen=True)
class PlanarTransform:
    """Rigid transform in the ground plane: rotate by ``yaw`` about +y, then shift."""

    yaw: float = 0.0
    tx: float = 0.0
    tz: float = 0.0

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        if pts.size == 0:
            return pts.copy()
        return pts @ rotation(self.yaw).T + np.array([self.tx, 0.0, self.tz])

    def apply_pose(self, pose: Pose) -> Pose:
        p = rotation(self.yaw) @ pose.position + np.array([self.tx, 0.0, self.tz])
        return Pose(p[0], p[1], p[2], pose.yaw + self.yaw, pose.pitch)

    @classmethod
    def between(cls, src: Pose, dst: Pose) -> "PlanarTransform":
        """Transform T with T(src) == dst (planar part and yaw)."""
        yaw = normalize_angle(dst.yaw - src.yaw)
        p = rotation(yaw) @ src.position
        return cls(yaw, dst.x - p[0], dst.z - p[2])

    def to_list(self) -> list:
        return [self.yaw, self.tx, self.tz]


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        conf = np.asarray(self.confidences, dtype=float).reshape(-1)
        if len(pts) != len(conf):
            raise ValueError(f"{len(pts)} points but {len(conf)} confidences")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point coordinates")
        if not np.all(np.isfinite(conf)) or np.any(conf < 0):
            raise ValueError("confidences must be finite and non-negative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidences", conf)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(
            self.confidences, other.confidences
        )

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0))

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], self.confidences[idx])

    def scaled(self, s: float) -> "PointCloud":
        return PointCloud(self.points * s, self.confidences)

    def concat(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(
            np.vstack([self.points, other.points]),
            np.concatenate([self.confidences, other.confidences]),
        )


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Map camera-frame points to the frame ``pose`` is expressed in."""
    if len(cloud) == 0:
        return cloud
    if pose.yaw == 0.0 and pose.pitch == 0.0 and pose.x == pose.y == pose.z == 0.0:
        return PointCloud(cloud.points.copy(), cloud.confidences.copy())
    pts = cloud.points @ pose.rotation().T + pose.position
    return PointCloud(pts, cloud.confidences)


def inverse_transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Inverse of :func:`transform_cloud` on raw points."""
    return (points - pose.position) @ pose.rotation()


def pack_voxel_indices(idx: np.ndarray) -> np.ndarray:
    idx = idx.astype(np.int64) + _KEY_OFFSET
    if idx.size and (idx.min() < 0 or idx.max() >= (1 << _KEY_BITS)):
        raise ValueError("voxel index out of packable range")
    return (idx[:, 0] << (2 * _KEY_BITS)) | (idx[:, 1] << _KEY_BITS) | idx[:, 2]


def _unpack(keys: np.ndarray) -> np.ndarray:
    mask = (1 << _KEY_BITS) - 1
    out = np.stack([keys >> (2 * _KEY_BITS), (keys >> _KEY_BITS) & mask, keys & mask], 1)
    return out - _KEY_OFFSET


@dataclass(frozen=True, eq=False)
class VoxelSet:
    """Deduplicated set of occupied voxels, stored as sorted packed int64 keys."""

    voxel_size: float
    keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "keys", np.unique(np.asarray(self.keys, dtype=np.int64)))

    def __len__(self):
        return len(self.keys)

    def __eq__(self, other):
        if not isinstance(other, VoxelSet):
            return NotImplemented
        return self.voxel_size == other.voxel_size and np.array_equal(self.keys, other.keys)

    @classmethod
    def from_indices(cls, voxel_size: float, indices) -> "VoxelSet":
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices)
        idx = idx.reshape(-1, 3)
        return cls(voxel_size, pack_voxel_indices(idx))

    @property
    def indices(self) -> np.ndarray:
        return _unpack(self.keys)

    @property
    def occupied(self) -> set:
        return {tuple(int(v) for v in row) for row in self.indices}

    def union(self, other: "VoxelSet") -> "VoxelSet":
        _check_same_size(self, other)
        return VoxelSet(self.voxel_size, np.union1d(self.keys, other.keys))

    def centers(self) -> np.ndarray:
        return (self.indices + 0.5) * self.voxel_size


def voxelize(cloud: PointCloud, voxel_size: float) -> VoxelSet:
    if not voxel_size > 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    if len(cloud) == 0:
        return VoxelSet(voxel_size)
    idx = np.floor(cloud.points / voxel_size).astype(np.int64)
    return VoxelSet(voxel_size, pack_voxel_indices(idx))


def _check_same_size(a: VoxelSet, b: VoxelSet):
    if a.voxel_size != b.voxel_size:
        raise ValueError(f"voxel sizes differ: {a.voxel_size} vs {b.voxel_size}")


def voxel_iou(a: VoxelSet, b: VoxelSet) -> float:
    _check_same_size(a, b)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    inter = len(np.intersect1d(a.keys, b.keys, assume_unique=True))
    return inter / (len(a) + len(b) - inter)


def cosine_similarity(f, g) -> float:
    """Raw cosine in [-1, 1]; 0 when either vector is the zero sentinel."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"feature dimensions differ: {f.shape} vs {g.shape}")
    nf, ng = np.linalg.norm(f), np.linalg.norm(g)
    if nf == 0.0 or ng == 0.0:
        return 0.0
    return float(np.clip(np.dot(f, g) / (nf * ng), -1.0, 1.0))


def visual_similarity(f, g) -> float:
    """Cosine remapped to [0, 1]."""
    return 0.5 * (cosine_similarity(f, g) + 1.0)
