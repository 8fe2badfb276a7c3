"""Benchmark suites: manifests, batch execution, metrics CSV and run manifests.

A suite manifest is a small JSON document; every episode (world, goal,
start pose, context tour) is derived from its seeds, so the manifest alone
reproduces a batch.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .config import Config
from .episode import (EpisodeResult, EpisodeSpec, compute_metrics, record_context_video,
                      run_episode, scripted_tour, start_near)
from .geometry import Pose
from .world import GOAL_CATEGORIES, World, generate_world, load_world, random_free_pose

CSV_COLUMNS = ("episode_id", "world", "goal", "success", "steps", "path_length",
               "shortest_length", "spl_term", "dtg", "status")
CSV_NOTE = "# steps are counted per episode including STOP; mean_steps averages over all episodes, failures included"

MODES = ("standard", "near_endpoint")


@dataclass(frozen=True)
class Suite:
    name: str = "standard"
    worlds: tuple = tuple({"seed": s, "rooms": 3 + s % 3} for s in range(20))
    categories: tuple = GOAL_CATEGORIES
    max_steps: int = 300
    seed: int = 0
    start_seed: int = 1000
    mode: str = "standard"          # where episodes start
    context: bool = False           # feed the recorded tour bank
    tour_seed: int = 2000
    start_radius: float = 1.0
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.context and self.mode != "near_endpoint":
            raise ValueError("context runs start near the tour endpoint")
        object.__setattr__(self, "worlds", tuple(dict(w) for w in self.worlds))
        object.__setattr__(self, "categories", tuple(self.categories))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["worlds"] = [dict(w) for w in self.worlds]
        d["categories"] = list(self.categories)
        return d


def load_suite(path) -> Suite:
    with open(path) as fh:
        d = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    worlds = []
    for w in d.pop("worlds", Suite().worlds):
        w = dict(w)
        if "path" in w and not os.path.isabs(w["path"]):
            w["path"] = os.path.join(base, w["path"])
        worlds.append(w)
    return Suite(worlds=tuple(worlds), **d)


def save_suite(suite: Suite, path):
    with open(path, "w") as fh:
        json.dump(suite.to_dict(), fh, indent=1)
        fh.write("\n")


def world_name(entry: dict) -> str:
    if "path" in entry:
        return os.path.splitext(os.path.basename(entry["path"]))[0]
    return f"w{entry['seed']:03d}r{entry['rooms']}"


@functools.lru_cache(maxsize=64)
def _generated(seed: int, rooms: int) -> World:
    return generate_world(seed, rooms)


def make_world(entry: dict) -> World:
    if "path" in entry:
        return load_world(entry["path"])
    return _generated(int(entry["seed"]), int(entry["rooms"]))


def tour_for(world: World, suite: Suite):
    """(start pose, action list) of the scripted tour recorded for ``world``."""
    rng = np.random.default_rng([suite.tour_seed, world.seed])
    start = random_free_pose(world, rng)
    return start, scripted_tour(world, start)


_BANKS = {}


def context_bank(world: World, suite: Suite, cfg: Config):
    key = (id(world), suite.tour_seed, repr(cfg))
    if key not in _BANKS:
        start, actions = tour_for(world, suite)
        _BANKS.clear()
        _BANKS[key] = record_context_video(world, actions, start=start, seed=suite.tour_seed, cfg=cfg)
    return _BANKS[key]


def episode_specs(suite: Suite, cfg: Config = Config()) -> list:
    """(world label, EpisodeSpec) pairs in manifest order, world-major.

    Context banks are attached lazily by ``run_suite_episode`` so building
    the list stays cheap.
    """
    out = []
    for entry in suite.worlds:
        world = make_world(entry)
        label = world_name(entry)
        endpoint = None
        if suite.mode == "near_endpoint":
            start, actions = tour_for(world, suite)
            endpoint = _replay_endpoint(world, start, actions)
        for k, goal in enumerate(suite.categories):
            rng = np.random.default_rng([suite.start_seed, world.seed, k])
            if endpoint is None:
                start = random_free_pose(world, rng)
            else:
                start = start_near(world, endpoint, suite.start_radius, rng)
            eid = f"{suite.name}-{label}-{goal}"
            out.append((label, EpisodeSpec(world, goal, start, suite.max_steps, None,
                                           suite.seed + k, eid)))
    return out


def _replay_endpoint(world: World, start: Pose, actions) -> Pose:
    from .world import step_dynamics
    pose = start
    for a in actions:
        pose, _ = step_dynamics(world, pose, a)
    return pose


def run_suite_episode(suite: Suite, cfg: Config, label: str, spec: EpisodeSpec) -> EpisodeResult:
    if suite.context:
        spec = replace(spec, context_bank=context_bank(spec.world, suite, cfg))
    return run_episode(spec, cfg)


def _worker(args):
    suite, cfg, index = args
    label, spec = episode_specs(suite, cfg)[index]
    return index, label, run_suite_episode(suite, cfg, label, spec)


def run_batch(suite: Suite, cfg: Config = Config(), jobs: int = 1, progress=None) -> list:
    """Run every episode of ``suite``; returns [(world label, result)] in
    manifest order regardless of ``jobs``."""
    specs = episode_specs(suite, cfg)
    if jobs <= 1:
        out = []
        for label, spec in specs:
            res = run_suite_episode(suite, cfg, label, spec)
            if progress:
                progress(res)
            out.append((label, res))
        return out
    done = {}
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        for index, label, res in ex.map(_worker, [(suite, cfg, i) for i in range(len(specs))]):
            if progress:
                progress(res)
            done[index] = (label, res)
    return [done[i] for i in range(len(specs))]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "inf" if not np.isfinite(v) else f"{v:.6f}"
    return str(v)


def metrics_rows(labelled) -> list:
    return [[r.episode_id, label, r.goal, r.success, r.steps, r.path_length,
             r.shortest_length, r.spl_term, r.dtg, r.status] for label, r in labelled]


def metrics_csv(labelled) -> str:
    buf = io.StringIO()
    buf.write(CSV_NOTE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in metrics_rows(labelled):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_metrics_csv(labelled, path):
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv(labelled))


def read_metrics_csv(path) -> list:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def run_manifest(suite: Suite, cfg: Config, labelled) -> dict:
    m = compute_metrics([r for _, r in labelled])
    specs = {spec.episode_id: spec for _, spec in episode_specs(suite, cfg)}
    return {
        "suite": suite.to_dict(),
        "config": cfg.to_dict(),
        "summary": asdict(m),
        "episodes": [{"episode_id": r.episode_id, "world": label, "goal": r.goal,
                      "seed": specs[r.episode_id].seed,
                      "start": specs[r.episode_id].start.to_list(), "status": r.status, "context_status": r.context_status}
                     for label, r in labelled],
    }


def write_run_manifest(suite: Suite, cfg: Config, labelled, path):
    with open(path, "w") as fh:
        json.dump(run_manifest(suite, cfg, labelled), fh, indent=1, sort_keys=True)
        fh.write("\n")
