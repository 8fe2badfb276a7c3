"""Co-registered 2-D rasters built from the keyframe bank.

Rasters are indexed ``[iz, ix]``; cells are addressed as ``(ix, iz)`` tuples.
Cell ``(ix, iz)`` covers ``origin + [ix, ix+1) * cell_size`` along x and the
same along z. The map frame is the bank frame scaled to metres, with y = 0 at
camera height, so a point's height above the floor is ``y + camera_height``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

UNKNOWN, FREE, OBSTACLE = -1, 0, 1
_EIGHT = np.ones((3, 3), dtype=bool)


class NotReadyError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    cell_size: float = 0.1
    origin_x: float = 0.0
    origin_z: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.width < 0 or self.height < 0:
            raise ValueError("negative raster size")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def diameter(self) -> float:
        return self.cell_size * math.hypot(self.width, self.height)

    def covering(self, xz: np.ndarray, margin: int = 0) -> "GridSpec":
        """Smallest cell-aligned extension of this spec containing every (x, z)
        row of ``xz`` with ``margin`` cells to spare. Unchanged if already covered."""
        if len(xz) == 0:
            return self
        ix = np.floor((xz[:, 0] - self.origin_x) / self.cell_size).astype(np.int64)
        iz = np.floor((xz[:, 1] - self.origin_z) / self.cell_size).astype(np.int64)
        lo_x, hi_x = int(ix.min()), int(ix.max())
        lo_z, hi_z = int(iz.min()), int(iz.max())
        if self.width and self.height and lo_x >= 0 and lo_z >= 0 \
                and hi_x < self.width and hi_z < self.height:
            return self
        if self.width and self.height:
            lo_x, lo_z = min(lo_x, 0), min(lo_z, 0)
            hi_x, hi_z = max(hi_x, self.width - 1), max(hi_z, self.height - 1)
        lo_x, lo_z, hi_x, hi_z = lo_x - margin, lo_z - margin, hi_x + margin, hi_z + margin
        return GridSpec(self.cell_size, self.origin_x + lo_x * self.cell_size,
                        self.origin_z + lo_z * self.cell_size, hi_x - lo_x + 1, hi_z - lo_z + 1)

    def offset_in(self, bigger: "GridSpec") -> tuple:
        """(dx, dz) cell offset of this spec's origin inside ``bigger``."""
        return (int(round((self.origin_x - bigger.origin_x) / self.cell_size)),
                int(round((self.origin_z - bigger.origin_z) / self.cell_size)))


def world_to_cell(spec: GridSpec, p) -> tuple:
    p = np.asarray(p, dtype=float)
    x, z = (p[0], p[2]) if len(p) == 3 else (p[0], p[1])
    return (int(math.floor((x - spec.origin_x) / spec.cell_size)),
            int(math.floor((z - spec.origin_z) / spec.cell_size)))


def cell_to_world(spec: GridSpec, cell) -> np.ndarray:
    ix, iz = cell
    return np.array([spec.origin_x + (ix + 0.5) * spec.cell_size, 0.0,
                     spec.origin_z + (iz + 0.5) * spec.cell_size])


def points_to_cells(spec: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Vectorised world_to_cell on (N, 3) points; returns (N, 2) of (ix, iz)."""
    ix = np.floor((pts[:, 0] - spec.origin_x) / spec.cell_size).astype(np.int64)
    iz = np.floor((pts[:, 2] - spec.origin_z) / spec.cell_size).astype(np.int64)
    return np.stack([ix, iz], 1)


@dataclass(frozen=True, eq=False)
class GridMaps:
    spec: GridSpec
    obstacle: np.ndarray   # int8: UNKNOWN / FREE / OBSTACLE
    explored: np.ndarray   # bool
    value: np.ndarray      # float in [0, 1]

    def __post_init__(self):
        for name in ("obstacle", "explored", "value"):
            if getattr(self, name).shape != self.spec.shape:
                raise ValueError(f"{name} raster does not match the spec")

    def __eq__(self, other):
        if not isinstance(other, GridMaps):
            return NotImplemented
        return (self.spec == other.spec and np.array_equal(self.obstacle, other.obstacle)
                and np.array_equal(self.explored, other.explored)
                and np.array_equal(self.value, other.value))

    @classmethod
    def blank(cls, spec: GridSpec) -> "GridMaps":
        return cls(spec, np.full(spec.shape, UNKNOWN, dtype=np.int8),
                   np.zeros(spec.shape, dtype=bool), np.zeros(spec.shape))

    @property
    def free(self) -> np.ndarray:
        return self.obstacle == FREE

    @property
    def unknown(self) -> np.ndarray:
        return self.obstacle == UNKNOWN

    def in_bounds(self, cell) -> bool:
        ix, iz = cell
        return 0 <= ix < self.spec.width and 0 <= iz < self.spec.height


@dataclass(frozen=True)
class FrontierCluster:
    cells: tuple       # ((ix, iz), ...) sorted
    centroid: np.ndarray
    size: int


def _keyframe_metric(kf, scale):
    pts = kf.cloud.points * scale
    cam = np.array([kf.pose.x, kf.pose.y, kf.pose.z]) * scale
    return pts, cam


def _sweep_cells(spec: GridSpec, pts: np.ndarray, cam: np.ndarray, yaw: float,
                 obstacle_pt: np.ndarray, bin_width: float, max_range: float) -> np.ndarray:
    """Cells inside the camera's horizontal view wedge that lie nearer than the
    first obstacle return (or the farthest return when there is none) of
    their azimuth bin. Returns (M, 2) of (ix, iz)."""
    dx, dz = pts[:, 0] - cam[0], pts[:, 2] - cam[2]
    r = np.hypot(dx, dz)
    az = np.arctan2(-dz, dx) - yaw
    az = (az + np.pi) % (2 * np.pi) - np.pi
    b = np.floor(az / bin_width).astype(np.int64)
    lo = int(b.min())
    nb = int(b.max()) - lo + 1
    reach = np.zeros(nb)
    np.maximum.at(reach, b - lo, r)
    ob = np.full(nb, np.inf)
    if obstacle_pt.any():
        np.minimum.at(ob, b[obstacle_pt] - lo, r[obstacle_pt])
    reach = np.minimum(reach, ob - spec.cell_size)
    rad = int(math.ceil(min(max_range, reach.max(initial=0.0)) / spec.cell_size)) + 1
    cix, ciz = world_to_cell(spec, cam)
    gx, gz = np.meshgrid(np.arange(cix - rad, cix + rad + 1), np.arange(ciz - rad, ciz + rad + 1))
    gx, gz = gx.ravel(), gz.ravel()
    cx = spec.origin_x + (gx + 0.5) * spec.cell_size - cam[0]
    cz = spec.origin_z + (gz + 0.5) * spec.cell_size - cam[2]
    cr = np.hypot(cx, cz)
    caz = (np.arctan2(-cz, cx) - yaw + np.pi) % (2 * np.pi) - np.pi
    cb = np.floor(caz / bin_width).astype(np.int64) - lo
    ok = (cb >= 0) & (cb < nb)
    ok[ok] &= cr[ok] < reach[cb[ok]]
    ok &= (gx >= 0) & (gx < spec.width) & (gz >= 0) & (gz < spec.height)
    # the camera's own cell is free by construction
    ok |= (gx == cix) & (gz == ciz)
    return np.stack([gx[ok], gz[ok]], 1)


class MapBuilder:
    """Accumulates keyframes into obstacle / exploration / value rasters.

    Rasters auto-grow with cell-aligned re-anchoring, so existing cell states
    are preserved bit for bit. If the bank's metric scale moves by more than
    ``rescale_tol`` the rasters are rebuilt from every keyframe.
    """

    def __init__(self, cell_size=0.1, height_band=(0.15, 1.6), camera_height=0.88,
                 point_confidence=1.9, margin_cells=40, sweep=False, sweep_bin_deg=None,
                 max_range=5.0, rescale_tol=1e-3):
        self.spec = GridSpec(cell_size)
        self.band = tuple(height_band)
        self.camera_height = camera_height
        self.point_confidence = point_confidence
        self.margin = margin_cells
        self.sweep = sweep
        self.sweep_bin = math.radians(sweep_bin_deg) if sweep_bin_deg else None
        self.max_range = max_range
        self.rescale_tol = rescale_tol
        self.scale = None
        self.obstacle_hits = np.zeros((0, 0), dtype=bool)
        self.explored = np.zeros((0, 0), dtype=bool)
        self.value = np.zeros((0, 0))
        self._seen = []

    def _grow(self, xz: np.ndarray):
        new = self.spec.covering(xz, self.margin)
        if new == self.spec:
            return
        ox, oz = self.spec.offset_in(new)
        h, w = self.spec.shape
        for name, fill in (("obstacle_hits", False), ("explored", False), ("value", 0.0)):
            old = getattr(self, name)
            arr = np.full(new.shape, fill, dtype=old.dtype)
            arr[oz:oz + h, ox:ox + w] = old
            setattr(self, name, arr)
        self.spec = new

    def _splat(self, kf, scale):
        pts, cam = _keyframe_metric(kf, scale)
        self._grow(np.vstack([pts[:, [0, 2]], cam[None, [0, 2]]]))
        if len(pts) == 0:
            return
        cells = points_to_cells(self.spec, pts)
        hgt = pts[:, 1] + self.camera_height
        inband = (hgt > self.band[0]) & (hgt < self.band[1])
        self.explored[cells[:, 1], cells[:, 0]] = True
        self.obstacle_hits[cells[inband, 1], cells[inband, 0]] = True
        if self.sweep:
            sw = _sweep_cells(self.spec, pts, cam, kf.pose.yaw, inband, self.sweep_bin,
                              self.max_range)
            self.explored[sw[:, 1], sw[:, 0]] = True
        conf = kf.cloud.confidences > self.point_confidence
        if conf.any():
            c = cells[conf]
            cur = self.value[c[:, 1], c[:, 0]]
            self.value[c[:, 1], c[:, 0]] = np.maximum(cur, kf.value_score)

    def update(self, bank):
        """Fold in keyframes not seen yet. A rescale, or a change to an already
        folded keyframe's value score, triggers a full rebuild."""
        if bank.scale is None:
            raise NotReadyError("metric scale unknown")
        s = bank.scale
        ids = [(kf.id, kf.value_score) for kf in bank.keyframes]
        if (self.scale is None or abs(s / self.scale - 1.0) > self.rescale_tol
                or self._seen != ids[:len(self._seen)]):
            self.spec = GridSpec(self.spec.cell_size)
            self.obstacle_hits = np.zeros((0, 0), dtype=bool)
            self.explored = np.zeros((0, 0), dtype=bool)
            self.value = np.zeros((0, 0))
            self._seen = []
            self.scale = s
        for kf in bank.keyframes[len(self._seen):]:
            self._splat(kf, self.scale)
            self._seen.append((kf.id, kf.value_score))
        return self

    def maps(self) -> GridMaps:
        obstacle = np.where(self.obstacle_hits, OBSTACLE,
                            np.where(self.explored, FREE, UNKNOWN)).astype(np.int8)
        return GridMaps(self.spec, obstacle, self.explored.copy(), self.value.copy())


def project_maps(bank, store=(), spec: GridSpec = None, height_band=(0.15, 1.6), *,
                 sweep=False, sweep_bin_deg=None, point_confidence=1.9, margin_cells=0,
                 max_range=5.0) -> GridMaps:
    """Rebuild the rasters from scratch.

    Keyframe points in the height band (and fused object points in the band)
    become obstacles; every point marks its cell explored. ``spec`` fixes the
    cell size and initial extent; it grows to cover all points. With ``sweep``
    the free wedge in front of each camera is also marked explored.
    """
    if bank.scale is None:
        raise NotReadyError("metric scale unknown")
    spec = spec or GridSpec()
    b = MapBuilder(spec.cell_size, height_band, bank.scale_cfg.camera_height, point_confidence,
                   margin_cells, sweep, sweep_bin_deg, max_range)
    b.spec = spec
    b.obstacle_hits = np.zeros(spec.shape, dtype=bool)
    b.explored = np.zeros(spec.shape, dtype=bool)
    b.value = np.zeros(spec.shape)
    b.scale = bank.scale
    for kf in bank.keyframes:
        b._splat(kf, b.scale)
    for ob in store:
        pts = ob.cloud.points
        if len(pts) == 0:
            continue
        b._grow(pts[:, [0, 2]])
        cells = points_to_cells(b.spec, pts)
        hgt = pts[:, 1] + b.camera_height
        inband = (hgt > height_band[0]) & (hgt < height_band[1])
        b.explored[cells[:, 1], cells[:, 0]] = True
        b.obstacle_hits[cells[inband, 1], cells[inband, 0]] = True
    return b.maps()


def detect_frontiers(maps: GridMaps, min_frontier_size: int = 3) -> list:
    """Explored free cells with an unknown 8-neighbour, clustered by
    8-connectivity. Cells beyond the raster edge count as unknown."""
    unknown = np.pad(maps.unknown, 1, constant_values=True)
    near_unknown = ndimage.binary_dilation(unknown, structure=_EIGHT)[1:-1, 1:-1]
    front = maps.explored & maps.free & near_unknown
    labels, n = ndimage.label(front, structure=_EIGHT)
    if n == 0:
        return []
    spec = maps.spec
    out = []
    iz, ix = np.nonzero(labels)
    lab = labels[iz, ix]
    order = np.argsort(lab, kind="stable")
    bounds = np.searchsorted(lab[order], np.arange(1, n + 2))
    for k in range(n):
        sel = order[bounds[k]:bounds[k + 1]]
        if len(sel) < min_frontier_size:
            continue
        cells = sorted(zip(ix[sel].tolist(), iz[sel].tolist()))
        cx = spec.origin_x + (ix[sel].mean() + 0.5) * spec.cell_size
        cz = spec.origin_z + (iz[sel].mean() + 0.5) * spec.cell_size
        out.append(FrontierCluster(tuple(cells), np.array([cx, 0.0, cz]), len(sel)))
    out.sort(key=lambda f: (-f.size, f.centroid[0], f.centroid[2]))
    return out


def build_value_map(bank, spec: GridSpec, point_confidence: float = 1.9) -> np.ndarray:
    """Per cell, the highest value score among keyframes whose confident
    points land there; 0 where nothing lands. Points outside ``spec`` are
    dropped (the raster does not grow here)."""
    if bank.goal is None:
        raise NotReadyError("keyframes have not been scored for a goal")
    out = np.zeros(spec.shape)
    if not bank.keyframes:
        return out
    if bank.scale is None:
        raise NotReadyError("metric scale unknown")
    for kf in bank.keyframes:
        keep = kf.cloud.confidences > point_confidence
        if not keep.any():
            continue
        c = points_to_cells(spec, kf.cloud.points[keep] * bank.scale)
        ok = (c[:, 0] >= 0) & (c[:, 0] < spec.width) & (c[:, 1] >= 0) & (c[:, 1] < spec.height)
        c = c[ok]
        out[c[:, 1], c[:, 0]] = np.maximum(out[c[:, 1], c[:, 0]], kf.value_score)
    return out
