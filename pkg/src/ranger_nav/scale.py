"""Metric scale recovery from the known camera height.

The reconstruction frame has an arbitrary scale. The lowest slice of a cloud
(by y) is treated as ground candidates, a plane is fitted with RANSAC, and the
camera's distance to that plane is compared with the physical camera height.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ScaleConfig
from .geometry import PointCloud


class InsufficientDataError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


class DegenerateGroundError(EstimationError):
    pass


@dataclass(frozen=True)
class PlaneCoeffs:
    """Plane a*x + b*y + c*z + d = 0 with unit normal (a, b, c)."""

    a: float
    b: float
    c: float
    d: float
    inlier_count: int = 0
    inlier_fraction: float = 0.0

    def __post_init__(self):
        n2 = self.a ** 2 + self.b ** 2 + self.c ** 2
        if abs(n2 - 1.0) > 1e-9:
            raise ValueError(f"plane normal is not unit length (|n|^2 = {n2})")

    @classmethod
    def from_raw(cls, a, b, c, d, **kw) -> "PlaneCoeffs":
        n = math.sqrt(a * a + b * b + c * c)
        if n == 0:
            raise ValueError("zero plane normal")
        return cls(a / n, b / n, c / n, d / n, **kw)

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def signed_distance(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.normal + self.d


@dataclass(frozen=True)
class MetricScale:
    scale: float
    h_ground: float
    h_real: float


def select_ground_candidates(cloud: PointCloud, fraction: float = 0.2) -> PointCloud:
    """The ceil(fraction * N) points with the smallest y, ties by index."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(cloud)
    if n < 10:
        raise InsufficientDataError(f"need at least 10 points, got {n}")
    k = math.ceil(fraction * n - 1e-9)
    order = np.argsort(cloud.points[:, 1], kind="stable")[:k]
    return cloud.subset(np.sort(order))


def fit_ground_plane(candidates: PointCloud, iterations: int = 200, inlier_tol: float = 0.02,
                     seed: int = 0, origin=(0.0, 0.0, 0.0)) -> PlaneCoeffs:
    """Seeded RANSAC over 3-point samples, refit by least squares on the inliers.

    The normal is oriented so that ``origin`` (the camera) lies on the positive
    side.
    """
    pts = np.asarray(candidates.points, dtype=float)
    if len(pts) < 3:
        raise EstimationError("need at least 3 points")
    centered = pts - pts.mean(0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise EstimationError("candidate points are collinear")

    rng = np.random.default_rng(seed)
    n = len(pts)
    samples = np.stack([rng.choice(n, 3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    if not valid.any():
        raise EstimationError("every RANSAC sample was degenerate")
    normals = normals[valid] / norms[valid, None]
    ds = -np.einsum("ij,ij->i", normals, p0[valid])
    dist = np.abs(pts @ normals.T + ds[None, :])
    counts = (dist <= inlier_tol).sum(0)
    best = int(np.argmax(counts))
    inliers = dist[:, best] <= inlier_tol

    sel = pts[inliers]
    if len(sel) >= 3:
        mu = sel.mean(0)
        _, s_in, vt = np.linalg.svd(sel - mu)
        if s_in[1] > 1e-9 * max(s_in[0], 1e-300):
            normal = vt[-1]
            d = -float(normal @ mu)
        else:
            normal, d = normals[best], float(ds[best])
    else:
        normal, d = normals[best], float(ds[best])
    o = np.asarray(origin, dtype=float)
    if normal @ o + d < 0:
        normal, d = -normal, -d
    final = np.abs(pts @ normal + d) <= inlier_tol
    return PlaneCoeffs.from_raw(*normal, d, inlier_count=int(final.sum()),
                                inlier_fraction=float(final.mean()))


def ground_height(plane) -> float:
    """|d| / ||(a, b, c)||; accepts PlaneCoeffs or a raw (a, b, c, d) tuple."""
    if isinstance(plane, PlaneCoeffs):
        a, b, c, d = plane.a, plane.b, plane.c, plane.d
    else:
        a, b, c, d = (float(v) for v in plane)
    n = math.sqrt(a * a + b * b + c * c)
    if n == 0:
        raise ValueError("zero plane normal")
    return abs(d) / n


def compute_scale(h_real: float, h_ground: float) -> MetricScale:
    if not h_real > 0:
        raise ValueError(f"h_real must be positive, got {h_real}")
    if not h_ground > 1e-6:
        raise DegenerateGroundError(f"ground height {h_ground} too small")
    return MetricScale(h_real / h_ground, h_ground, h_real)


def estimate_scale(cloud: PointCloud, camera_position, cfg: ScaleConfig = ScaleConfig(),
                   seed: int = 0) -> MetricScale:
    """Full pipeline on a cloud expressed in the reconstruction frame.

    The cloud is re-centred on ``camera_position`` so the fitted plane's offset
    is the camera's height above ground, and divided by the median candidate
    depth so ``cfg.inlier_tol`` is relative rather than in raw frame units.
    Fits tilted more than ``cfg.max_tilt_deg`` from level, or supported by
    too few inliers, are rejected.
    """
    centered = PointCloud(cloud.points - np.asarray(camera_position, dtype=float),
                          cloud.confidences)
    cand = select_ground_candidates(centered, cfg.ground_fraction)
    # the frame scale is unknown, so fit in units of the typical candidate depth
    # below the camera; the tolerance then means the same at every scale
    unit = float(np.median(-cand.points[:, 1]))
    if not unit > 1e-9:
        raise DegenerateGroundError("ground candidates are not below the camera")
    cand = PointCloud(cand.points / unit, cand.confidences)
    plane = fit_ground_plane(cand, cfg.ransac_iterations, cfg.inlier_tol, seed)
    if plane.inlier_fraction < cfg.min_inlier_fraction:
        raise EstimationError(f"inlier fraction {plane.inlier_fraction:.2f} too low")
    if abs(plane.b) < math.cos(math.radians(cfg.max_tilt_deg)):
        raise EstimationError("fitted plane is not horizontal")
    if plane.d <= 0:
        raise DegenerateGroundError("camera is not above the fitted plane")
    return compute_scale(cfg.camera_height, ground_height(plane) * unit)
