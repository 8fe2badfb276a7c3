"""Exact continuous shortest path from a start point to a goal's success region.

The success region is the union of free cells whose 8-connected geodesic to
the goal footprint is within the success radius, i.e. exactly the set of
positions where stopping counts as success. Free space is the closure of
the union of free cells. Shortest paths in a polygonal domain bend only at
reflex vertices, so a visibility graph over those vertices plus the start,
with an exact point-to-region final leg, gives the geodesic. Geometry is
built in integer cell units so every predicate on boundary-hugging segments
is exact.
"""
from __future__ import annotations

import functools
import math

import numpy as np
import shapely
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from shapely.geometry import box
from shapely.geometry.polygon import orient

from .world import World, goal_distance_field


def _row_boxes(mask: np.ndarray):
    """Run-length boxes (cell units) covering the True cells of ``mask``."""
    boxes = []
    for r in range(mask.shape[0]):
        row = np.concatenate([[False], mask[r], [False]])
        edges = np.flatnonzero(row[1:] != row[:-1])
        for c0, c1 in zip(edges[::2], edges[1::2]):
            boxes.append(box(c0, r, c1, r + 1))
    return boxes


def _polygon(mask: np.ndarray):
    if not mask.any():
        return shapely.Polygon()
    return shapely.unary_union(_row_boxes(mask))


def _rings(geom):
    polys = getattr(geom, "geoms", [geom])
    for p in polys:
        p = orient(p, sign=1.0)
        yield np.asarray(p.exterior.coords)[:-1]
        for h in p.interiors:
            yield np.asarray(h.coords)[:-1]


def reflex_vertices(free) -> np.ndarray:
    """Vertices where free space turns by more than 180 degrees."""
    out = []
    for ring in _rings(free):
        prev = np.roll(ring, 1, axis=0)
        nxt = np.roll(ring, -1, axis=0)
        a, b = ring - prev, nxt - ring
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        out.append(ring[cross < 0])
    return np.unique(np.vstack(out), axis=0) if out else np.zeros((0, 2))


def _visible(free, p, q) -> np.ndarray:
    """Vectorised segment-in-free-space test for point arrays p, q (N, 2)."""
    if len(p) == 0:
        return np.zeros(0, dtype=bool)
    same = np.all(p == q, axis=1)
    lines = shapely.linestrings(np.stack([p, q], 1))
    vis = shapely.covers(free, lines)
    vis[same] = shapely.covers(free, shapely.points(p[same]))
    return vis


def _region_targets(region):
    """Vertices and edges of the target region's boundary."""
    verts, edges = [], []
    for ring in _rings(region):
        verts.append(ring)
        edges.append(np.stack([ring, np.roll(ring, -1, axis=0)], 1))
    return np.vstack(verts), np.vstack(edges)


def _dist_to_region(free, region, pts: np.ndarray) -> np.ndarray:
    """Length of the shortest straight, visible leg from each point into the region."""
    n = len(pts)
    out = np.full(n, np.inf)
    if region.is_empty or n == 0:
        return out
    inside = shapely.covers(region, shapely.points(pts))
    out[inside] = 0.0
    verts, edges = _region_targets(region)
    a, b = edges[:, 0], edges[:, 1]
    ab = b - a
    L2 = (ab ** 2).sum(1)
    for k in np.flatnonzero(~inside):
        p = pts[k]
        t = np.clip(((p - a) * ab).sum(1) / L2, 0.0, 1.0)
        feet = a + t[:, None] * ab
        cand = np.vstack([verts, feet])
        d = np.hypot(*(cand - p).T)
        order = np.argsort(d, kind="stable")
        # test in increasing length until one is visible
        for chunk in np.array_split(order, max(1, len(order) // 32)):
            vis = _visible(free, np.repeat(p[None], len(chunk), 0), cand[chunk])
            if vis.any():
                out[k] = float(d[chunk][vis].min())
                break
    return out


class _WorldGraph:
    def __init__(self, world: World):
        self.free = _polygon(~world.blocked)
        shapely.prepare(self.free)
        self.nodes = reflex_vertices(self.free)
        n = len(self.nodes)
        i, j = np.triu_indices(n, 1)
        vis = _visible(self.free, self.nodes[i], self.nodes[j])
        i, j = i[vis], j[vis]
        w = np.hypot(*(self.nodes[i] - self.nodes[j]).T)
        self.adj = csr_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                              shape=(n, n))


@functools.lru_cache(maxsize=32)
def _world_graph(world: World) -> _WorldGraph:
    return _WorldGraph(world)


def success_region_mask(world: World, category: str, radius: float) -> np.ndarray:
    return (goal_distance_field(world, category) <= radius) & ~world.blocked


@functools.lru_cache(maxsize=256)
def _goal_costs(world: World, category: str, radius: float):
    g = _world_graph(world)
    region = _polygon(success_region_mask(world, category, radius))
    shapely.prepare(region)
    n = len(g.nodes)
    h = _dist_to_region(g.free, region, g.nodes)
    # node -> target through the graph; the target is an extra node n
    fin = np.isfinite(h)
    rows = np.concatenate([g.adj.tocoo().row, np.flatnonzero(fin), np.full(fin.sum(), n)])
    cols = np.concatenate([g.adj.tocoo().col, np.full(fin.sum(), n), np.flatnonzero(fin)])
    data = np.concatenate([g.adj.tocoo().data, h[fin], h[fin]])
    # zero-length legs would vanish from a sparse matrix
    data = np.maximum(data, 1e-300)
    full = csr_matrix((data, (rows, cols)), shape=(n + 1, n + 1))
    D = dijkstra(full, directed=False, indices=n)[:n] if n else np.zeros(0)
    D = np.where(D < 1e-200, 0.0, D)
    return region, D


def shortest_path_length(world: World, category: str, start_xz, radius: float = 1.0) -> float:
    """Metres from ``start_xz`` to the nearest stopping point that counts as success."""
    cs = world.cell_size
    s = np.array([start_xz[0] / cs, start_xz[1] / cs])
    g = _world_graph(world)
    region, D = _goal_costs(world, category, float(radius))
    if region.is_empty:
        return math.inf
    best = float(_dist_to_region(g.free, region, s[None])[0])
    if len(g.nodes):
        vis = _visible(g.free, np.repeat(s[None], len(g.nodes), 0), g.nodes)
        if vis.any():
            d = np.hypot(*(g.nodes[vis] - s).T) + D[vis]
            best = min(best, float(d.min()))
    return best * cs
