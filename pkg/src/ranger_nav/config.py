"""Tunable constants, grouped by stage and loadable from JSON.

Each section is a dataclass; the JSON form nests sections by name, e.g.
``{"fusion": {"tau": 0.6}, "planner": {"theta_obj": 0.4}}``. Keys that are
absent keep their defaults; unknown keys raise.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace


@dataclass(frozen=True)
class PerceptionConfig:
    hfov_deg: float = 79.0
    vfov_deg: float = 63.4
    n_cols: int = 48
    n_rows: int = 36
    max_range: float = 5.0
    ray_step: float = 0.02
    feature_dim: int = 32
    feature_noise: float = 0.05
    min_subtend_deg: float = 2.0
    false_positive_rate: float = 0.0
    drift_pos_std: float = 0.01
    drift_yaw_std_deg: float = 0.2
    drift_pullback: float = 0.95


@dataclass(frozen=True)
class ScaleConfig:
    ground_fraction: float = 0.2
    ransac_iterations: int = 200
    inlier_tol: float = 0.02
    min_inlier_fraction: float = 0.5
    max_tilt_deg: float = 20.0
    ema_alpha: float = 0.3
    max_scale_jump: float = 0.25    # relative change beyond which an estimate is set aside
    rescale_votes: int = 3
    camera_height: float = 0.88


@dataclass(frozen=True)
class MemoryConfig:
    omega_k: float = 0.333
    min_inlier_ratio: float = 0.3
    reloc_yaw_step_deg: float = 15.0
    reloc_top_k: int = 8
    reloc_sweep: bool = True    # confirm context placement with a full turn
    max_keyframes: int = 0  # 0 disables the cap


@dataclass(frozen=True)
class FusionConfig:
    w1: float = 0.5
    w2: float = 0.5
    tau: float = 0.55
    voxel_size: float = 0.1
    point_confidence: float = 1.9


@dataclass(frozen=True)
class MapConfig:
    cell_size: float = 0.1
    height_low: float = 0.15
    height_high: float = 1.6
    min_frontier_size: int = 3
    margin_cells: int = 10


@dataclass(frozen=True)
class PlannerConfig:
    lambda_c: float = 0.6
    lambda_v_obj: float = 0.4
    lambda_v: float = 0.5
    lambda_s: float = 0.2
    lambda_d: float = 0.3
    theta_obj: float = 0.5
    value_radius_cells: int = 5
    pocket_cells: int = 150
    blacklist_ttl: int = 100
    blacklist_radius_cells: int = 3
    collision_limit: int = 5
    replan_every: int = 15
    reach_cells: int = 2
    inflate_radius: int = 2
    escape_cells: int = 400
    unknown_speed: float = 0.5
    heading_tol_deg: float = 15.0
    subgoal_dist: float = 0.5
    stop_radius: float = 0.7
    initial_spin: bool = True


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 300
    success_radius: float = 1.0
    context_start_radius: float = 1.0


@dataclass(frozen=True)
class Config:
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    scale: ScaleConfig = field(default_factory=ScaleConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    maps: MapConfig = field(default_factory=MapConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        for key, section in data.items():
            if key not in {f.name for f in fields(cls)}:
                raise KeyError(f"unknown config section {key!r}")
            current = getattr(cfg, key)
            names = {f.name for f in fields(current)}
            bad = set(section) - names
            if bad:
                raise KeyError(f"unknown keys in {key!r}: {sorted(bad)}")
            cfg = replace(cfg, **{key: replace(current, **section)})
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def deg(x: float) -> float:
    return math.radians(x)
