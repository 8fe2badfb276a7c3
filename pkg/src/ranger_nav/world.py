"""Synthetic indoor worlds: floor plans, objects, dynamics and geodesic oracle.

Grid convention: row index runs along +z, column index along +x, and cell
(r, c) covers x in [c, c+1) * cell_size, z in [r, r+1) * cell_size. The floor
is y = 0; the camera rides at ``camera_height``.
"""
from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .geometry import Pose, heading

MOVE_STEP = 0.25
TURN_ANGLE = math.radians(30.0)
MIN_SCALE, MAX_SCALE = 0.2, 5.0

# footprint (m, m) and height (m)
OBJECT_SHAPES = {
    "chair": (0.5, 0.5, 0.9),
    "bed": (1.6, 2.0, 0.6),
    "plant": (0.4, 0.4, 1.0),
    "toilet": (0.4, 0.7, 0.8),
    "tv_monitor": (0.3, 1.0, 1.3),
    "sofa": (0.9, 2.0, 0.85),
    "table": (0.8, 1.2, 0.75),
    "cabinet": (0.5, 1.0, 1.2),
    "sink": (0.5, 0.6, 0.9),
    "bathtub": (0.8, 1.6, 0.6),
}
GOAL_CATEGORIES = ("chair", "bed", "plant", "toilet", "tv_monitor", "sofa")
KNOWN_CATEGORIES = tuple(OBJECT_SHAPES)


class WorldFormatError(ValueError):
    """World file does not parse."""


class WorldValidationError(ValueError):
    """World parses but breaks an invariant."""


class InvalidStateError(ValueError):
    """Pose is not on free space."""


class Action(enum.Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    LOOK_UP = "look_up"
    LOOK_DOWN = "look_down"
    STOP = "stop"


@dataclass(frozen=True)
class WorldObject:
    category: str
    cells: tuple  # ((row, col), ...)
    height: float

    def to_dict(self):
        return {"category": self.category, "cells": [list(c) for c in self.cells],
                "height": self.height}


@dataclass(frozen=True, eq=False)
class World:
    cell_size: float
    walls: np.ndarray  # bool [rows, cols]
    objects: tuple
    camera_height: float = 0.88
    scale_factor: float = 1.0
    seed: int = 0
    rooms: tuple = ()  # ((r0, c0, r1, c1), ...) half-open, optional metadata
    blocked: np.ndarray = field(init=False, repr=False)
    object_index: np.ndarray = field(init=False, repr=False)
    height_map: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "rooms", tuple(tuple(int(v) for v in r) for r in self.rooms))
        validate_world(self)
        idx = np.full(walls.shape, -1, dtype=np.int32)
        hmap = np.where(walls, np.inf, 0.0)
        for k, ob in enumerate(self.objects):
            rr, cc = np.array(ob.cells).T
            idx[rr, cc] = k
            hmap[rr, cc] = ob.height
        object.__setattr__(self, "object_index", idx)
        object.__setattr__(self, "height_map", hmap)
        object.__setattr__(self, "blocked", walls | (idx >= 0))

    @property
    def shape(self):
        return self.walls.shape

    def __eq__(self, other):
        if not isinstance(other, World):
            return NotImplemented
        return (self.cell_size == other.cell_size
                and np.array_equal(self.walls, other.walls)
                and self.objects == other.objects
                and self.camera_height == other.camera_height
                and self.scale_factor == other.scale_factor
                and self.seed == other.seed
                and self.rooms == other.rooms)

    __hash__ = object.__hash__

    def cell_of(self, x: float, z: float) -> tuple:
        return int(math.floor(z / self.cell_size)), int(math.floor(x / self.cell_size))

    def cell_center(self, r: int, c: int) -> tuple:
        return (c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.shape[0] and 0 <= c < self.shape[1]

    def is_free(self, x: float, z: float) -> bool:
        r, c = self.cell_of(x, z)
        return self.in_bounds(r, c) and not self.blocked[r, c]

    def categories(self) -> list:
        return sorted({ob.category for ob in self.objects})

    def goal_cells(self, category: str) -> np.ndarray:
        cells = [c for ob in self.objects if ob.category == category for c in ob.cells]
        return np.array(cells, dtype=int).reshape(-1, 2)

    def room_of(self, x: float, z: float):
        r, c = self.cell_of(x, z)
        for k, (r0, c0, r1, c1) in enumerate(self.rooms):
            if r0 <= r < r1 and c0 <= c < c1:
                return k
        return None

    def to_dict(self) -> dict:
        grid = ["".join("#" if w else "." for w in row) for row in self.walls]
        out = {
            "cell_size": self.cell_size,
            "grid": grid,
            "objects": [ob.to_dict() for ob in self.objects],
            "camera_height": self.camera_height,
            "scale_factor": self.scale_factor,
            "seed": self.seed,
        }
        if self.rooms:
            out["rooms"] = [list(r) for r in self.rooms]
        return out


def validate_world(w: World):
    walls = w.walls
    if walls.ndim != 2 or min(walls.shape) < 3:
        raise WorldValidationError("grid must be 2-D and at least 3x3")
    if not (walls[0].all() and walls[-1].all() and walls[:, 0].all() and walls[:, -1].all()):
        raise WorldValidationError("boundary: outer ring of the grid must be wall")
    if not w.cell_size > 0:
        raise WorldValidationError("cell_size must be positive")
    if not w.camera_height > 0:
        raise WorldValidationError("camera_height must be positive")
    if not MIN_SCALE <= w.scale_factor <= MAX_SCALE:
        raise WorldValidationError(
            f"scale_factor {w.scale_factor} outside [{MIN_SCALE}, {MAX_SCALE}]")
    seen = set()
    for k, ob in enumerate(w.objects):
        if not ob.cells:
            raise WorldValidationError(f"object {k}: empty footprint")
        if not ob.height > 0:
            raise WorldValidationError(f"object {k}: height must be positive")
        for r, c in ob.cells:
            if not (0 <= r < walls.shape[0] and 0 <= c < walls.shape[1]):
                raise WorldValidationError(f"object {k}: cell {(r, c)} out of bounds")
            if walls[r, c]:
                raise WorldValidationError(f"object {k}: footprint cell {(r, c)} is a wall")
            if (r, c) in seen:
                raise WorldValidationError(f"object {k}: cell {(r, c)} shared with another object")
            seen.add((r, c))


def world_from_dict(d: dict) -> World:
    try:
        grid = d["grid"]
        rows = [str(r) for r in grid]
        if len({len(r) for r in rows}) != 1:
            raise WorldFormatError("grid: rows have unequal length")
        bad = {ch for r in rows for ch in r} - {"#", "."}
        if bad:
            raise WorldFormatError(f"grid: unexpected characters {sorted(bad)}")
        walls = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)
        objects = []
        for k, o in enumerate(d.get("objects", [])):
            try:
                cells = tuple((int(a), int(b)) for a, b in o["cells"])
                objects.append(WorldObject(str(o["category"]), cells, float(o["height"])))
            except (KeyError, TypeError, ValueError) as e:
                raise WorldFormatError(f"objects[{k}]: {e!r}") from None
        return World(
            cell_size=float(d["cell_size"]),
            walls=walls,
            objects=tuple(objects),
            camera_height=float(d.get("camera_height", 0.88)),
            scale_factor=float(d.get("scale_factor", 1.0)),
            seed=int(d.get("seed", 0)),
            rooms=tuple(tuple(r) for r in d.get("rooms", ())),
        )
    except KeyError as e:
        raise WorldFormatError(f"missing field {e.args[0]!r}") from None


def load_world(path) -> World:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise WorldFormatError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from None
    return world_from_dict(data)


def save_world(world: World, path):
    with open(path, "w") as fh:
        json.dump(world.to_dict(), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------- generation

def _rect_cells(r0, c0, h, w):
    return tuple((r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w))


def generate_world(seed: int, n_rooms: int, categories=GOAL_CATEGORIES,
                   n_distractors: int = 0, cell_size: float = 0.1,
                   camera_height: float = 0.88, scale_factor=None) -> World:
    """Grid of rectangular rooms joined by doors, furnished with objects.

    Deterministic in all arguments. Every requested category appears at least
    once and all non-blocked cells form one 4-connected region.
    """
    if n_rooms < 1:
        raise ValueError("n_rooms must be >= 1")
    rng = np.random.default_rng(seed)
    ncols = math.ceil(math.sqrt(n_rooms))
    nrows = math.ceil(n_rooms / ncols)
    lo, hi = round(3.0 / cell_size), round(5.0 / cell_size)
    widths = rng.integers(lo, hi + 1, size=ncols)
    heights = rng.integers(lo, hi + 1, size=nrows)
    col0 = np.concatenate([[1], 1 + np.cumsum(widths + 1)[:-1]])
    row0 = np.concatenate([[1], 1 + np.cumsum(heights + 1)[:-1]])
    W = int(widths.sum() + ncols + 1)
    H = int(heights.sum() + nrows + 1)
    walls = np.ones((H, W), dtype=bool)
    slots = [(i, j) for i in range(nrows) for j in range(ncols)][:n_rooms]
    rooms = []
    for i, j in slots:
        r0, c0 = int(row0[i]), int(col0[j])
        r1, c1 = r0 + int(heights[i]), c0 + int(widths[j])
        walls[r0:r1, c0:c1] = False
        rooms.append((r0, c0, r1, c1))

    # spanning tree plus a few loops
    index = {s: k for k, s in enumerate(slots)}
    edges = []
    for (i, j), k in index.items():
        for di, dj in ((0, 1), (1, 0)):
            if (i + di, j + dj) in index:
                edges.append((k, index[(i + di, j + dj)]))
    order = rng.permutation(len(edges))
    parent = list(range(len(slots)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    door_cells = []
    door_w = round(1.0 / cell_size)
    margin = round(0.5 / cell_size)
    for e in order:
        a, b = edges[e]
        fa, fb = find(a), find(b)
        if fa == fb and rng.random() > 0.25:
            continue
        parent[fa] = fb
        ra, rb = rooms[a], rooms[b]
        if ra[0] == rb[0]:  # side by side: vertical wall at column ra[3]
            span = min(ra[2], rb[2]) - max(ra[0], rb[0])
            off = int(rng.integers(margin, span - margin - door_w + 1))
            r = max(ra[0], rb[0]) + off
            cells = [(rr, ra[3]) for rr in range(r, r + door_w)]
        else:  # stacked: horizontal wall at row ra[2]
            span = min(ra[3], rb[3]) - max(ra[1], rb[1])
            off = int(rng.integers(margin, span - margin - door_w + 1))
            c = max(ra[1], rb[1]) + off
            cells = [(ra[2], cc) for cc in range(c, c + door_w)]
        for rr, cc in cells:
            walls[rr, cc] = False
        door_cells.extend(cells)

    keepout = np.zeros_like(walls)
    if door_cells:
        d = np.array(door_cells)
        keepout[d[:, 0], d[:, 1]] = True
        keepout = ndimage.binary_dilation(keepout, iterations=round(0.8 / cell_size))

    wanted = list(categories)
    extra = [c for c in KNOWN_CATEGORIES if c not in wanted]
    for _ in range(n_distractors):
        if extra:
            wanted.append(extra[int(rng.integers(len(extra)))])

    gap = 6
    for _attempt in range(50):
        occupied = np.zeros_like(walls)
        objects = []
        ok = True
        for cat in wanted:
            placed = _place_object(rng, cat, rooms, walls, occupied, keepout, cell_size, gap)
            if placed is None:
                ok = False
                break
            objects.append(placed)
            rr, cc = np.array(placed.cells).T
            occupied[rr, cc] = True
        if not ok:
            continue
        free = ~walls & ~occupied
        _, n = ndimage.label(free)
        if n == 1:
            break
    else:
        raise RuntimeError(f"could not furnish world for seed {seed}")

    if scale_factor is None:
        scale_factor = float(math.exp(rng.uniform(math.log(MIN_SCALE), math.log(MAX_SCALE))))
    return World(cell_size, walls, tuple(objects), camera_height, float(scale_factor),
                 int(seed), tuple(rooms))


def _place_object(rng, cat, rooms, walls, occupied, keepout, cs, gap):
    w_m, d_m, h = OBJECT_SHAPES.get(cat, (0.6, 0.6, 0.8))
    w, d = max(1, round(w_m / cs)), max(1, round(d_m / cs))
    for _ in range(300):
        hh, ww = (w, d) if rng.random() < 0.5 else (d, w)
        r0, c0, r1, c1 = rooms[int(rng.integers(len(rooms)))]
        if r1 - r0 < hh + 2 * gap or c1 - c0 < ww + 2 * gap:
            continue
        rows = []
        if rng.random() < 0.5:  # flush against a wall
            side = int(rng.integers(4))
            if side == 0:
                rr, cc = r0, int(rng.integers(c0 + gap, c1 - ww - gap + 1))
            elif side == 1:
                rr, cc = r1 - hh, int(rng.integers(c0 + gap, c1 - ww - gap + 1))
            elif side == 2:
                rr, cc = int(rng.integers(r0 + gap, r1 - hh - gap + 1)), c0
            else:
                rr, cc = int(rng.integers(r0 + gap, r1 - hh - gap + 1)), c1 - ww
        else:
            rr = int(rng.integers(r0 + gap, r1 - hh - gap + 1))
            cc = int(rng.integers(c0 + gap, c1 - ww - gap + 1))
        rows = slice(rr, rr + hh)
        cols = slice(cc, cc + ww)
        if walls[rows, cols].any() or keepout[rows, cols].any():
            continue
        halo = (slice(max(rr - gap, 0), rr + hh + gap), slice(max(cc - gap, 0), cc + ww + gap))
        if occupied[halo].any():
            continue
        return WorldObject(cat, _rect_cells(rr, cc, hh, ww), float(h))
    return None


# ---------------------------------------------------------------- dynamics

def check_free(world: World, pose: Pose):
    if not world.is_free(pose.x, pose.z):
        raise InvalidStateError(f"pose ({pose.x:.3f}, {pose.z:.3f}) is not on free space")


def segment_cells(cell_size: float, p0, p1) -> np.ndarray:
    """(row, col) of every cell whose interior the segment p0 -> p1 enters.

    The segment is split at each grid-line crossing; the midpoint of every
    piece lies inside exactly the cell that piece traverses.
    """
    x0, z0 = float(p0[0]), float(p0[1])
    dx, dz = float(p1[0]) - x0, float(p1[1]) - z0
    ts = [0.0, 1.0]
    for a, d in ((x0, dx), (z0, dz)):
        if d != 0.0:
            k0, k1 = sorted((a / cell_size, (a + d) / cell_size))
            ks = np.arange(math.ceil(k0), math.floor(k1) + 1)
            ts.extend(((ks * cell_size - a) / d).tolist())
    t = np.unique(np.clip(ts, 0.0, 1.0))
    mid = 0.5 * (t[:-1] + t[1:]) if len(t) > 1 else t
    r = np.floor((z0 + mid * dz) / cell_size).astype(int)
    c = np.floor((x0 + mid * dx) / cell_size).astype(int)
    return np.stack([r, c], 1)


def segment_blocked(world: World, p0, p1) -> bool:
    rc = segment_cells(world.cell_size, p0, p1)
    r, c = rc[:, 0], rc[:, 1]
    if (r < 0).any() or (c < 0).any() or (r >= world.shape[0]).any() or (c >= world.shape[1]).any():
        return True
    return bool(world.blocked[r, c].any())


def step_dynamics(world: World, pose: Pose, action: Action):
    """Apply one discrete action; returns (new_pose, collided)."""
    action = Action(action)
    if action is Action.MOVE_FORWARD:
        h = heading(pose.yaw)
        nx, nz = pose.x + MOVE_STEP * h[0], pose.z + MOVE_STEP * h[1]
        if segment_blocked(world, (pose.x, pose.z), (nx, nz)):
            return pose, True
        return pose.with_(x=nx, z=nz), False
    if action is Action.TURN_LEFT:
        return pose.with_(yaw=pose.yaw + TURN_ANGLE), False
    if action is Action.TURN_RIGHT:
        return pose.with_(yaw=pose.yaw - TURN_ANGLE), False
    if action is Action.LOOK_UP:
        return pose.with_(pitch=min(pose.pitch + TURN_ANGLE, math.pi / 2)), False
    if action is Action.LOOK_DOWN:
        return pose.with_(pitch=max(pose.pitch - TURN_ANGLE, -math.pi / 2)), False
    return pose, False


# ---------------------------------------------------------------- geodesics

_NEIGHBORS8 = ((0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1))


def grid_graph(passable: np.ndarray, cell_size: float, corner_block=None) -> csr_matrix:
    """8-connected graph over passable cells; diagonals need both orthogonals clear."""
    H, W = passable.shape
    corner_block = passable if corner_block is None else corner_block
    ids = np.arange(H * W).reshape(H, W)
    src, dst, wt = [], [], []
    for dr, dc in _NEIGHBORS8:
        r0, r1 = max(0, -dr), H - max(0, dr)
        c0, c1 = max(0, -dc), W - max(0, dc)
        a = passable[r0:r1, c0:c1]
        b = passable[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        ok = a & b
        if dr and dc:
            ok &= corner_block[r0 + dr:r1 + dr, c0:c1] & corner_block[r0:r1, c0 + dc:c1 + dc]
        src.append(ids[r0:r1, c0:c1][ok])
        dst.append(ids[r0 + dr:r1 + dr, c0 + dc:c1 + dc][ok])
        wt.append(np.full(int(ok.sum()), cell_size * (math.sqrt(2) if dr and dc else 1.0)))
    return csr_matrix((np.concatenate(wt), (np.concatenate(src), np.concatenate(dst))),
                      shape=(H * W, H * W))


@functools.lru_cache(maxsize=64)
def _free_graph(world: World):
    return grid_graph(~world.blocked, world.cell_size)


def distance_field(world: World, target_cells) -> np.ndarray:
    """Geodesic distance (m) from every cell to the nearest target cell.

    Targets may be blocked cells (an object footprint); the final step into a
    target is allowed, nothing else passes through blocked cells.
    """
    targets = np.asarray(target_cells, dtype=int).reshape(-1, 2)
    H, W = world.shape
    if len(targets) == 0:
        return np.full((H, W), np.inf)
    passable = ~world.blocked
    passable_t = passable.copy()
    passable_t[targets[:, 0], targets[:, 1]] = True
    graph = grid_graph(passable_t, world.cell_size, corner_block=passable_t)
    src = targets[:, 0] * W + targets[:, 1]
    d = dijkstra(graph, directed=False, indices=src, min_only=True)
    return d.reshape(H, W)


@functools.lru_cache(maxsize=256)
def _goal_field(world: World, category: str) -> np.ndarray:
    return distance_field(world, world.goal_cells(category))


def goal_distance_field(world: World, category: str) -> np.ndarray:
    return _goal_field(world, category)


def geodesic_distance(world: World, p, q) -> float:
    """Shortest 8-connected free-grid path length between two points (m)."""
    cells = []
    for pt in (p, q):
        x, z = float(pt[0]), float(pt[-1])
        r, c = world.cell_of(x, z)
        if not world.in_bounds(r, c) or world.blocked[r, c]:
            raise ValueError(f"point ({x:.3f}, {z:.3f}) is not on a free cell")
        cells.append(r * world.shape[1] + c)
    if cells[0] == cells[1]:
        return 0.0
    d = dijkstra(_free_graph(world), directed=False, indices=cells[0])
    return float(d[cells[1]])


def distance_to_goal(world: World, pose: Pose, category: str) -> float:
    r, c = world.cell_of(pose.x, pose.z)
    return float(goal_distance_field(world, category)[r, c])


def random_free_pose(world: World, rng, clearance: int = 3) -> Pose:
    """Uniform random level pose at a cell centre at least ``clearance`` cells from blocks."""
    dist = ndimage.distance_transform_cdt(~world.blocked, metric="chessboard")
    rr, cc = np.nonzero(dist > clearance)
    k = int(rng.integers(len(rr)))
    x, z = world.cell_center(rr[k], cc[k])
    yaw = float(rng.integers(12)) * TURN_ANGLE
    return Pose(x, world.camera_height, z, yaw, 0.0)
