"""RGB-only zero-shot object navigation on a synthetic grid world.

Keyframe memory with metric scale recovery, semantic object fusion,
frontier and value maps, and a two-level planner (waypoint selection over
objects and frontiers, fast marching below it).
"""
from .config import Config
from .episode import (EpisodeResult, EpisodeSpec, MetricsSummary, compute_metrics,
                      record_context_video, run_episode)
from .world import Action, World, generate_world, load_world

__version__ = "0.1.0"
