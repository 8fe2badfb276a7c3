"""Netpbm export of the map rasters and an episode composite.

One pixel per cell, image rows follow the raster's z index. Every file
carries the grid spec in header comments so it can be re-registered.
"""
from __future__ import annotations

import os

import numpy as np

from .maps import OBSTACLE, UNKNOWN, GridMaps, detect_frontiers, world_to_cell

UNKNOWN_RGB = (255, 255, 255)
FREE_RGB = (205, 205, 205)
HEAT_RGB = (255, 120, 0)
OBSTACLE_RGB = (190, 20, 20)
FRONTIER_RGB = (250, 220, 0)
TRAJECTORY_RGB = (0, 160, 0)


def _header(kind: str, maps: GridMaps, extra=()) -> bytes:
    s = maps.spec
    lines = [kind,
             f"# cell_size {s.cell_size!r}",
             f"# origin_x {s.origin_x!r}",
             f"# origin_z {s.origin_z!r}",
             *(f"# {e}" for e in extra),
             f"{s.width} {s.height}",
             "255"]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(path, maps: GridMaps, raster: np.ndarray, note: str = ""):
    img = np.asarray(raster, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(_header("P5", maps, [note] if note else []))
        fh.write(img.tobytes())


def obstacle_image(maps: GridMaps) -> np.ndarray:
    return np.where(maps.obstacle == OBSTACLE, 0,
                    np.where(maps.obstacle == UNKNOWN, 128, 255)).astype(np.uint8)


def composite(maps: GridMaps, trajectory=(), frontiers=None) -> np.ndarray:
    """RGB raster: unknown white, free gray tinted toward orange by value,
    obstacles red, frontiers yellow, then the trajectory in green on top."""
    H, W = maps.spec.shape
    img = np.empty((H, W, 3))
    img[:] = UNKNOWN_RGB
    v = np.clip(maps.value, 0.0, 1.0)[..., None]
    free = maps.obstacle == 0
    tint = (1 - v) * np.array(FREE_RGB) + v * np.array(HEAT_RGB)
    img[free] = tint[free]
    img[maps.obstacle == OBSTACLE] = OBSTACLE_RGB
    if frontiers is None:
        frontiers = detect_frontiers(maps)
    for fr in frontiers:
        c = np.array(fr.cells)
        img[c[:, 1], c[:, 0]] = FRONTIER_RGB
    for cell in trajectory_cells(maps, trajectory):
        img[cell[1], cell[0]] = TRAJECTORY_RGB
    return np.round(img).astype(np.uint8)


def trajectory_cells(maps: GridMaps, poses) -> list:
    """Cells of consecutive poses joined by straight runs, clipped to the raster."""
    out = []
    prev = None
    for p in poses:
        c = world_to_cell(maps.spec, (p.x, p.z))
        if prev is not None:
            n = max(abs(c[0] - prev[0]), abs(c[1] - prev[1]))
            for k in range(1, n):
                t = k / n
                out.append((int(round(prev[0] + t * (c[0] - prev[0]))),
                            int(round(prev[1] + t * (c[1] - prev[1])))))
        out.append(c)
        prev = c
    return [c for c in out if maps.in_bounds(c)]


def write_ppm(path, maps: GridMaps, rgb: np.ndarray, note: str = ""):
    with open(path, "wb") as fh:
        fh.write(_header("P6", maps, [note] if note else []))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def render_episode(result, maps: GridMaps, out_dir, prefix: str = "episode") -> list:
    """Write obstacle / explored / value PGMs and the composite PPM; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    note = f"episode {result.episode_id} goal {result.goal} status {result.status}"
    paths = []
    p = os.path.join(out_dir, f"{prefix}_obstacle.pgm")
    write_pgm(p, maps, obstacle_image(maps), note)
    paths.append(p)
    p = os.path.join(out_dir, f"{prefix}_explored.pgm")
    write_pgm(p, maps, np.where(maps.explored, 255, 0), note)
    paths.append(p)
    p = os.path.join(out_dir, f"{prefix}_value.pgm")
    write_pgm(p, maps, np.round(np.clip(maps.value, 0, 1) * 255), note)
    paths.append(p)
    p = os.path.join(out_dir, f"{prefix}_composite.ppm")
    write_ppm(p, maps, composite(maps, result.est_trajectory), note)
    paths.append(p)
    return paths


def read_pnm(path) -> tuple:
    """(header comment lines, pixel array) of a P5/P6 file written here."""
    with open(path, "rb") as fh:
        data = fh.read()
    lines, pos = [], 0
    fields = []
    while len(fields) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            lines.append(line[1:].strip())
        else:
            fields.extend(line.split())
    kind, w, h = fields[0], int(fields[1]), int(fields[2])
    px = np.frombuffer(data[pos:], dtype=np.uint8)
    return lines, px.reshape(h, w, 3) if kind == "P6" else px.reshape(h, w)
