"""Waypoint selection over goal objects and frontiers, with a decaying blacklist."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .config import PlannerConfig
from .maps import GridMaps, world_to_cell

OBJECT_GOAL, FRONTIER = "object_goal", "frontier"


@dataclass(frozen=True)
class Waypoint:
    kind: str
    target_cell: tuple
    source_id: int
    score: float = 0.0
    confidence: float = 0.0   # object confidence, 0 for frontiers
    size: int = 0             # frontier size, 0 for objects


@dataclass(frozen=True)
class BlacklistEntry:
    kind: str
    cell: tuple
    count: int
    step: int


@dataclass(frozen=True)
class Blacklist:
    entries: tuple = ()
    radius: int = 3
    ttl: int = 100

    def active(self, step: int) -> "Blacklist":
        return replace(self, entries=tuple(e for e in self.entries if step - e.step < self.ttl))

    def _near(self, e: BlacklistEntry, kind: str, cell) -> bool:
        return e.kind == kind and math.hypot(e.cell[0] - cell[0], e.cell[1] - cell[1]) <= self.radius

    def contains(self, w: Waypoint, step: int) -> bool:
        return any(self._near(e, w.kind, w.target_cell) for e in self.active(step).entries)


def report_unreachable(blacklist: Blacklist, w: Waypoint, step: int) -> Blacklist:
    """Add ``w`` or bump the entry within ``radius`` cells of it; expired
    entries are dropped on the way."""
    bl = blacklist.active(step)
    entries = list(bl.entries)
    for k, e in enumerate(entries):
        if bl._near(e, w.kind, w.target_cell):
            entries[k] = BlacklistEntry(e.kind, e.cell, e.count + 1, step)
            return replace(bl, entries=tuple(entries))
    entries.append(BlacklistEntry(w.kind, tuple(w.target_cell), 1, step))
    return replace(bl, entries=tuple(entries))


def nearest_cell(mask: np.ndarray, cell, restrict=None):
    """Cell of ``mask`` (indexed [iz, ix]) nearest to ``cell`` in Euclidean
    distance, ties broken by (iz, ix); optionally only among ``restrict``."""
    if restrict is not None:
        cand = np.array(restrict, dtype=np.int64).reshape(-1, 2)
        cand = cand[mask[cand[:, 1], cand[:, 0]]]
        if len(cand):
            iz, ix = cand[:, 1], cand[:, 0]
        else:
            iz, ix = np.nonzero(mask)
    else:
        iz, ix = np.nonzero(mask)
    if len(iz) == 0:
        return None
    d2 = (ix - cell[0]) ** 2 + (iz - cell[1]) ** 2
    k = np.lexsort((ix, iz, d2))[0]
    return (int(ix[k]), int(iz[k]))


def candidate_waypoints(objects, frontiers, maps: GridMaps, passable: np.ndarray = None) -> list:
    """One object_goal per goal object plus one frontier waypoint per cluster.

    ``passable`` (default: free cells) restricts where targets may sit.
    Object targets snap the centroid to the nearest passable cell; frontier
    targets snap the centroid to the nearest passable cell of the cluster
    itself, falling back to any passable cell.
    """
    ok = maps.free if passable is None else passable
    out = []
    for ob in objects:
        c = world_to_cell(maps.spec, ob.centroid)
        t = nearest_cell(ok, c)
        if t is not None:
            out.append(Waypoint(OBJECT_GOAL, t, ob.id, confidence=float(ob.confidence)))
    for k, fr in enumerate(frontiers):
        c = world_to_cell(maps.spec, fr.centroid)
        t = nearest_cell(ok, c, restrict=fr.cells)
        if t is not None:
            out.append(Waypoint(FRONTIER, t, k, size=fr.size))
    return out


def open_frontiers(maps: GridMaps, frontiers, pocket_cells: int = 150) -> list:
    """Drop clusters that only border enclosed unknown pockets.

    An unknown component is open when it touches the raster edge or holds at
    least ``pocket_cells`` cells; gaps under furniture and behind narrow
    slots are closed and exploring them reveals nothing.
    """
    if not frontiers:
        return []
    lab, n = ndimage.label(maps.unknown, structure=np.ones((3, 3), dtype=bool))
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    edge = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    is_open = sizes >= pocket_cells
    is_open[edge] = True
    is_open[0] = False
    # 8-neighbourhood max of "open" labels
    reach = ndimage.maximum_filter(is_open[lab].astype(np.uint8), size=3, mode="constant")
    out = []
    for fr in frontiers:
        c = np.asarray(fr.cells)
        if reach[c[:, 1], c[:, 0]].any():
            out.append(fr)
    return out


def _window_max(value: np.ndarray, cell, radius: int) -> float:
    ix, iz = cell
    H, W = value.shape
    z0, z1 = max(iz - radius, 0), min(iz + radius + 1, H)
    x0, x1 = max(ix - radius, 0), min(ix + radius + 1, W)
    zz, xx = np.mgrid[z0:z1, x0:x1]
    disk = (zz - iz) ** 2 + (xx - ix) ** 2 <= radius * radius
    win = value[z0:z1, x0:x1][disk]
    return float(win.max()) if win.size else 0.0


def score_waypoint(w: Waypoint, maps: GridMaps, dist_field, cfg: PlannerConfig = PlannerConfig(),
                   max_size: int = None) -> float:
    """Linear score; ``-inf`` when the agent's distance field cannot reach it.

    ``dist_field`` is a DistanceField solved from the agent (or a raster of
    metres indexed [iz, ix]). Frontier size is normalised by ``max_size``
    (the largest candidate frontier), distance by the map diagonal.
    """
    vals = dist_field.values if hasattr(dist_field, "values") else dist_field
    ix, iz = w.target_cell
    d = float(vals[iz, ix])
    if not math.isfinite(d):
        return -math.inf
    if w.kind == OBJECT_GOAL:
        return cfg.lambda_c * w.confidence + cfg.lambda_v_obj * float(maps.value[iz, ix])
    size_norm = w.size / max(max_size or w.size, 1)
    dist_norm = d / max(maps.spec.diameter, 1e-9)
    v = _window_max(maps.value, w.target_cell, cfg.value_radius_cells)
    return cfg.lambda_v * v + cfg.lambda_s * size_norm - cfg.lambda_d * dist_norm


def score_all(cands, maps, dist_field, cfg: PlannerConfig = PlannerConfig()) -> list:
    sizes = [w.size for w in cands if w.kind == FRONTIER]
    m = max(sizes) if sizes else 1
    return [replace(w, score=score_waypoint(w, maps, dist_field, cfg, m)) for w in cands]


def select_waypoint(candidates, blacklist: Blacklist, step: int, dist_field=None,
                    theta_obj: float = 0.5):
    """Best non-blacklisted, finite-score candidate, or None.

    If any eligible object_goal has confidence >= theta_obj, only object
    goals compete. Ties: objects first, then nearer (when a distance field is
    given), then lower source_id.
    """
    vals = None if dist_field is None else (
        dist_field.values if hasattr(dist_field, "values") else dist_field)
    pool = [w for w in candidates if math.isfinite(w.score) and not blacklist.contains(w, step)]
    if not pool:
        return None
    committed = [w for w in pool if w.kind == OBJECT_GOAL and w.confidence >= theta_obj]
    if committed:
        pool = committed

    def key(w):
        d = 0.0 if vals is None else float(vals[w.target_cell[1], w.target_cell[0]])
        return (-w.score, 0 if w.kind == OBJECT_GOAL else 1, d, w.source_id)

    best = min(pool, key=key)
    assert not blacklist.contains(best, step)
    return best
