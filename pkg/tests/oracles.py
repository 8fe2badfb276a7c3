"""Independent reference implementations used by the tests.

Everything here is deliberately naive (heapq, nested loops, Python sets) and
shares no code with the package beyond plain data types.
"""
import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


def dijkstra8(passable, goals, cell_size=1.0, corner_cutting=False):
    """Distance from every cell to the nearest goal over the 8-connected grid.
    ``passable`` is indexed [row, col]; goals are (row, col)."""
    H, W = passable.shape
    dist = np.full((H, W), math.inf)
    pq = []
    for r, c in goals:
        dist[r, c] = 0.0
        heapq.heappush(pq, (0.0, r, c))
    while pq:
        d, r, c = heapq.heappop(pq)
        if d > dist[r, c]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < H and 0 <= nc < W) or not passable[nr, nc]:
                    continue
                if dr and dc and not corner_cutting and not (passable[r, nc] and passable[nr, c]):
                    continue
                nd = d + cell_size * (SQRT2 if dr and dc else 1.0)
                if nd < dist[nr, nc]:
                    dist[nr, nc] = nd
                    heapq.heappush(pq, (nd, nr, nc))
    return dist


def frontier_cells(obstacle, explored, unknown_code=-1, free_code=0):
    """Per-cell predicate: explored, free, and some 8-neighbour unknown (or
    off the raster). Returns a set of (ix, iz)."""
    H, W = obstacle.shape
    out = set()
    for iz in range(H):
        for ix in range(W):
            if not explored[iz, ix] or obstacle[iz, ix] != free_code:
                continue
            for dz in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dx == 0 and dz == 0:
                        continue
                    x, z = ix + dx, iz + dz
                    if not (0 <= x < W and 0 <= z < H) or obstacle[z, x] == unknown_code:
                        out.add((ix, iz))
    return out


def components8(cells):
    """8-connected components of a set of (ix, iz) by flood fill."""
    left = set(cells)
    comps = []
    while left:
        seed = left.pop()
        comp, stack = {seed}, [seed]
        while stack:
            x, z = stack.pop()
            for dx in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    n = (x + dx, z + dz)
                    if n in left:
                        left.remove(n)
                        comp.add(n)
                        stack.append(n)
        comps.append(frozenset(comp))
    return comps


def voxel_keys(points, voxel):
    return {tuple(int(math.floor(v / voxel)) for v in p) for p in points}


def iou(a, b):
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def remapped_cosine(f, g):
    nf = math.sqrt(sum(v * v for v in f))
    ng = math.sqrt(sum(v * v for v in g))
    if nf == 0 or ng == 0:
        return 0.5
    c = sum(a * b for a, b in zip(f, g)) / (nf * ng)
    return (max(-1.0, min(1.0, c)) + 1.0) / 2.0


def associate_oracle(objects, cloud_pts, feature, w1, w2, tau, voxel):
    """objects: list of (id, voxel key set, mean feature). Exhaustive scoring;
    ties to the lowest id; None means a new object."""
    keys = voxel_keys(cloud_pts, voxel)
    scored = [(w1 * remapped_cosine(f, feature) + w2 * iou(v, keys), oid)
              for oid, v, f in objects]
    if not scored:
        return None, None
    best = max(s for s, _ in scored)
    winner = min(oid for s, oid in scored if s == best)
    return (winner if best >= tau else None), best


def spl(results):
    """results: (success, shortest, path_length) triples."""
    terms = []
    for ok, l, p in results:
        terms.append(0.0 if not ok else (1.0 if max(p, l) == 0 else l / max(p, l)))
    return sum(terms) / len(terms)
