"""Fast Marching local planner: eikonal field, descent path, discrete actions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .geometry import bearing, normalize_angle
from .maps import OBSTACLE, UNKNOWN, GridMaps, GridSpec, points_to_cells, world_to_cell
from .world import Action, segment_cells

SQRT2 = math.sqrt(2.0)
# neighbour order (dix, diz): E, NE, N, NW, W, SW, S, SE; "north" is -z
NEIGHBORS = ((1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1))
_DX = np.array([n[0] for n in NEIGHBORS], dtype=np.int64)
_DZ = np.array([n[1] for n in NEIGHBORS], dtype=np.int64)
_DIAG_I = np.array([-1, 1, -1, 1], dtype=np.int64)
_DIAG_J = np.array([-1, 1, 1, -1], dtype=np.int64)


class NoPathError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DistanceField:
    values: np.ndarray      # [iz, ix], metres, inf where unreachable
    goal_cells: tuple
    spec: GridSpec
    passable: np.ndarray    # cells the front was allowed to cross

    def at(self, cell) -> float:
        ix, iz = cell
        if not (0 <= ix < self.spec.width and 0 <= iz < self.spec.height):
            return math.inf
        return float(self.values[iz, ix])


@dataclass(frozen=True)
class PlannedPath:
    cells: tuple    # ((ix, iz), ...) start first
    length: float


@numba.njit(cache=True)
def _solve_pair(a, b, f):
    if a > b:
        a, b = b, a
    if b - a >= f:
        return a + f
    return 0.5 * (a + b + math.sqrt(2.0 * f * f - (a - b) * (a - b)))


@numba.njit(cache=True)
def _uniform_box(cost, i0, j0, i1, j1, f):
    for i in range(min(i0, i1), max(i0, i1) + 1):
        for j in range(min(j0, j1), max(j0, j1) + 1):
            if cost[i, j] != f:
                return False
    return True


@numba.njit(cache=True)
def _sift_up(keys, heap, pos, k):
    item = heap[k]
    key = keys[item]
    while k > 0:
        parent = (k - 1) >> 1
        p = heap[parent]
        if keys[p] < key or (keys[p] == key and p < item):
            break
        heap[k] = p
        pos[p] = k
        k = parent
    heap[k] = item
    pos[item] = k


@numba.njit(cache=True)
def _sift_down(keys, heap, pos, k, n):
    item = heap[k]
    key = keys[item]
    while True:
        c = 2 * k + 1
        if c >= n:
            break
        if c + 1 < n:
            a = heap[c]
            b = heap[c + 1]
            if keys[b] < keys[a] or (keys[b] == keys[a] and b < a):
                c += 1
        ch = heap[c]
        if key < keys[ch] or (key == keys[ch] and item < ch):
            break
        heap[k] = ch
        pos[ch] = k
        k = c
    heap[k] = item
    pos[item] = k


@numba.njit(cache=True)
def _push_or_decrease(keys, heap, pos, n, item, value):
    """Insert ``item`` or lower its key; returns the new heap size."""
    keys[item] = value
    if pos[item] < 0:
        heap[n] = item
        pos[item] = n
        _sift_up(keys, heap, pos, n)
        return n + 1
    _sift_up(keys, heap, pos, pos[item])
    return n


@numba.njit(cache=True)
def _fmm_core(cost, goal_mask, init_radius, stop_at):
    """Multi-stencil first-order fast marching.

    ``cost`` is metres per cell (inf = impassable). Each trial cell takes the
    smaller of the axis-aligned and the 45-degree rotated upwind updates;
    diagonal neighbours are only used when both shared orthogonal cells are
    passable, so the front never squeezes between touching corners.

    Cells within ``init_radius`` of a goal whose bounding box with it has
    uniform cost start from the exact straight-line value; this removes the
    first-order start-up error around point sources. The narrow band is an
    indexed binary heap with decrease-key, ties broken by cell index.
    With ``stop_at`` >= 0 the march ends once that flat index is accepted;
    every cell with a smaller value is final by then.
    """
    H, W = cost.shape
    N = H * W
    T = np.full(N, np.inf)
    accepted = np.zeros(N, np.bool_)
    heap = np.empty(N, np.int64)
    pos = np.full(N, -1, np.int64)
    n = 0
    r = init_radius
    for i in range(H):
        for j in range(W):
            if not goal_mask[i, j]:
                continue
            n = _push_or_decrease(T, heap, pos, n, i * W + j, 0.0)
    for i in range(H):
        for j in range(W):
            if not goal_mask[i, j] or r <= 0:
                continue
            f = cost[i, j]
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ni = i + di
                    nj = j + dj
                    if ni < 0 or nj < 0 or ni >= H or nj >= W or di * di + dj * dj > r * r:
                        continue
                    if goal_mask[ni, nj] or not _uniform_box(cost, i, j, ni, nj, f):
                        continue
                    v = f * math.sqrt(di * di + dj * dj)
                    if v < T[ni * W + nj]:
                        n = _push_or_decrease(T, heap, pos, n, ni * W + nj, v)
    while n > 0:
        k = heap[0]
        n -= 1
        if n > 0:
            heap[0] = heap[n]
            pos[heap[0]] = 0
            _sift_down(T, heap, pos, 0, n)
        pos[k] = -1
        accepted[k] = True
        if k == stop_at:
            break
        i = k // W
        j = k - i * W
        for d in range(8):
            di = _DZ[d]
            dj = _DX[d]
            ni = i + di
            nj = j + dj
            if ni < 0 or nj < 0 or ni >= H or nj >= W:
                continue
            q = ni * W + nj
            if accepted[q] or not math.isfinite(cost[ni, nj]):
                continue
            if di != 0 and dj != 0:
                if not (math.isfinite(cost[ni, j]) and math.isfinite(cost[i, nj])):
                    continue
            f = cost[ni, nj]
            # axis stencil
            ax = np.inf
            if nj > 0 and accepted[q - 1]:
                ax = T[q - 1]
            if nj < W - 1 and accepted[q + 1] and T[q + 1] < ax:
                ax = T[q + 1]
            az = np.inf
            if ni > 0 and accepted[q - W]:
                az = T[q - W]
            if ni < H - 1 and accepted[q + W] and T[q + W] < az:
                az = T[q + W]
            best = np.inf
            if math.isfinite(ax) or math.isfinite(az):
                best = _solve_pair(ax, az, f)
            # diagonal stencil, spacing sqrt(2)
            d1 = np.inf
            d2 = np.inf
            for s in range(4):
                si = _DIAG_I[s]
                sj = _DIAG_J[s]
                pi = ni + si
                pj = nj + sj
                if pi < 0 or pj < 0 or pi >= H or pj >= W or not accepted[pi * W + pj]:
                    continue
                if not (math.isfinite(cost[pi, nj]) and math.isfinite(cost[ni, pj])):
                    continue
                if s < 2:
                    if T[pi * W + pj] < d1:
                        d1 = T[pi * W + pj]
                elif T[pi * W + pj] < d2:
                    d2 = T[pi * W + pj]
            if math.isfinite(d1) or math.isfinite(d2):
                v = _solve_pair(d1, d2, f * 1.4142135623730951)
                if v < best:
                    best = v
            if best < T[q]:
                n = _push_or_decrease(T, heap, pos, n, q, best)
    return T.reshape(H, W)


def inflate(obstacle_mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return obstacle_mask.copy()
    r = np.arange(-radius, radius + 1)
    disk = (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius
    return ndimage.binary_dilation(obstacle_mask, structure=disk)


def traversal_cost(maps: GridMaps, inflate_radius: int = 2, unknown_speed: float = 0.5,
                   keep_free=None, keep_radius: int = None) -> np.ndarray:
    """Metres per cell: cell_size on free, cell_size / unknown_speed on unknown,
    inf on inflated obstacles. ``keep_free`` (a cell) exempts inflated-only
    cells within ``keep_radius`` (default: the inflation radius) of it, so an
    agent standing in the inflation margin can still leave it; the cell
    itself is always passable."""
    obst = maps.obstacle == OBSTACLE
    blocked = inflate(obst, inflate_radius)
    if keep_free is not None:
        kr = inflate_radius if keep_radius is None else keep_radius
        ix, iz = keep_free
        H, W = blocked.shape
        z0, z1 = max(iz - kr, 0), min(iz + kr + 1, H)
        x0, x1 = max(ix - kr, 0), min(ix + kr + 1, W)
        zz, xx = np.mgrid[z0:z1, x0:x1]
        near = (zz - iz) ** 2 + (xx - ix) ** 2 <= kr * kr
        sub = blocked[z0:z1, x0:x1]
        sub[near & ~obst[z0:z1, x0:x1]] = False
        if 0 <= iz < H and 0 <= ix < W:
            blocked[iz, ix] = False     # the agent stands there, whatever the map says
    cs = maps.spec.cell_size
    cost = np.where(maps.obstacle == UNKNOWN, cs / unknown_speed, cs)
    cost[blocked] = np.inf
    return cost


def fmm_solve(maps: GridMaps, goals, inflate_radius: int = 2, unknown_speed: float = 0.5,
              keep_free=None, cost: np.ndarray = None, init_radius: int = 5,
              stop_cell=None) -> DistanceField:
    """Distance field (metres) to the nearest goal cell.

    Goal cells are always made passable, so an object footprint can be a
    target. ``stop_cell`` ends the march early once that cell is final
    (enough for extracting a path from it). Raises NoPathError when no goal
    lies inside the raster.
    """
    if cost is None:
        cost = traversal_cost(maps, inflate_radius, unknown_speed, keep_free)
    else:
        cost = cost.copy()
    goals = np.asarray(goals, dtype=np.int64).reshape(-1, 2)
    H, W = cost.shape
    ok = (goals[:, 0] >= 0) & (goals[:, 0] < W) & (goals[:, 1] >= 0) & (goals[:, 1] < H)
    goals = goals[ok]
    if len(goals) == 0:
        raise NoPathError("no goal cell inside the map")
    mask = np.zeros((H, W), dtype=bool)
    mask[goals[:, 1], goals[:, 0]] = True
    cost[mask & ~np.isfinite(cost)] = maps.spec.cell_size
    stop = -1
    if stop_cell is not None and 0 <= stop_cell[0] < W and 0 <= stop_cell[1] < H:
        stop = int(stop_cell[1]) * W + int(stop_cell[0])
    T = _fmm_core(cost, mask, init_radius, stop)
    return DistanceField(T, tuple(map(tuple, goals.tolist())), maps.spec, np.isfinite(cost))


@numba.njit(cache=True)
def _descend(T, passable, ix, iz, cs):
    H, W = T.shape
    xs = [ix]
    zs = [iz]
    length = 0.0
    while T[iz, ix] > 0.0:
        cur = T[iz, ix]
        best = -1.0
        bx = -1
        bz = -1
        bl = 0.0
        for d in range(8):
            dx = _DX[d]
            dz = _DZ[d]
            nx = ix + dx
            nz = iz + dz
            if nx < 0 or nz < 0 or nx >= W or nz >= H or not passable[nz, nx]:
                continue
            if dx != 0 and dz != 0 and not (passable[iz, nx] and passable[nz, ix]):
                continue
            if not T[nz, nx] < cur:
                continue
            step = cs * (1.4142135623730951 if dx != 0 and dz != 0 else 1.0)
            slope = (cur - T[nz, nx]) / step
            if slope > best:
                best = slope
                bx = nx
                bz = nz
                bl = step
        if bx < 0:
            break
        ix = bx
        iz = bz
        length += bl
        xs.append(ix)
        zs.append(iz)
    return xs, zs, length


def extract_path(field: DistanceField, start) -> PlannedPath:
    """Steepest descent (largest drop per metre) over the 8-neighbourhood."""
    ix, iz = (int(v) for v in start)
    if not math.isfinite(field.at((ix, iz))):
        raise NoPathError(f"start cell {(ix, iz)} is unreachable")
    xs, zs, length = _descend(field.values, field.passable, ix, iz, field.spec.cell_size)
    if field.values[zs[-1], xs[-1]] > 0.0:
        raise NoPathError("descent stalled before reaching a goal")
    return PlannedPath(tuple(zip(list(xs), list(zs))), float(length))


def _line_of_sight(spec: GridSpec, passable: np.ndarray, p0, p1) -> bool:
    rc = segment_cells(spec.cell_size, (p0[0] - spec.origin_x, p0[1] - spec.origin_z),
                       (p1[0] - spec.origin_x, p1[1] - spec.origin_z))
    iz, ix = rc[:, 0], rc[:, 1]
    H, W = passable.shape
    if (ix < 0).any() or (iz < 0).any() or (ix >= W).any() or (iz >= H).any():
        return False
    return bool(passable[iz, ix].all())


def next_action(path: PlannedPath, pose, spec: GridSpec, passable: np.ndarray = None,
                subgoal_dist: float = 0.5, heading_tol_deg: float = 15.0) -> Action:
    """Turn toward, or step to, the farthest path cell within ``subgoal_dist``
    that is in line of sight. Never returns STOP."""
    if not path.cells:
        raise ValueError("empty path")
    tol = math.radians(heading_tol_deg)
    px, pz = pose.x, pose.z
    sub = None
    for ix, iz in path.cells:
        c = (spec.origin_x + (ix + 0.5) * spec.cell_size, spec.origin_z + (iz + 0.5) * spec.cell_size)
        if math.hypot(c[0] - px, c[1] - pz) > subgoal_dist:
            break
        if passable is not None and not _line_of_sight(spec, passable, (px, pz), c):
            break
        sub = c
    if sub is None:
        ix, iz = path.cells[min(1, len(path.cells) - 1)]
        sub = (spec.origin_x + (ix + 0.5) * spec.cell_size, spec.origin_z + (iz + 0.5) * spec.cell_size)
    dx, dz = sub[0] - px, sub[1] - pz
    if math.hypot(dx, dz) < 1e-9:
        err = 0.0
    else:
        err = normalize_angle(bearing(dx, dz) - pose.yaw)
    if abs(err) > tol:
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    if abs(pose.pitch) > tol:
        return Action.LOOK_UP if pose.pitch < 0 else Action.LOOK_DOWN
    return Action.MOVE_FORWARD


def object_cells(spec: GridSpec, obj) -> np.ndarray:
    c = points_to_cells(spec, obj.cloud.points)
    return np.unique(c, axis=0)


def object_distance(maps: GridMaps, agent_cell, obj, unknown_speed: float = 0.5) -> float:
    """FMM distance from ``agent_cell`` to the nearest cell of ``obj`` on the
    un-inflated map; the object's own cells are goals, other obstacles block."""
    field = fmm_solve(maps, object_cells(maps.spec, obj), inflate_radius=0,
                      unknown_speed=unknown_speed,
                      cost=traversal_cost(maps, 0, unknown_speed, keep_free=agent_cell,
                                          keep_radius=1))
    return field.at(agent_cell)


def check_stop(agent_pose, goal_objects, maps: GridMaps, stop_radius: float = 1.0,
               conf_floor: float = 0.0, unknown_speed: float = 0.5) -> bool:
    """True iff a goal object with confidence >= conf_floor is within
    ``stop_radius`` of the agent along the map (FMM distance to its surface)."""
    if not goal_objects:
        return False
    cell = world_to_cell(maps.spec, (agent_pose.x, agent_pose.z))
    if not maps.in_bounds(cell):
        return False
    p = np.array([agent_pose.x, agent_pose.z])
    for ob in goal_objects:
        if ob.confidence < conf_floor or len(ob.cloud) == 0:
            continue
        # straight-line distance bounds the field from below
        if np.min(np.hypot(*(ob.cloud.points[:, [0, 2]] - p).T)) > stop_radius + maps.spec.cell_size:
            continue
        try:
            if object_distance(maps, cell, ob, unknown_speed) <= stop_radius:
                return True
        except NoPathError:
            continue
    return False

