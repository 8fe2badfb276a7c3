"""One object-goal episode in a generated three-room world.

Prints the step-by-step status of the agent's memory (keyframes, metric
scale, fused objects) every 20 steps, then the episode result, and writes
the final maps as Netpbm images.
"""
import argparse
import math

import numpy as np

from ranger_nav import Config, generate_world
from ranger_nav.agent import Navigator
from ranger_nav.fusion import query_goal_objects
from ranger_nav.render import render_episode
from ranger_nav.episode import EpisodeResult
from ranger_nav.oracle import shortest_path_length
from ranger_nav.world import distance_to_goal, random_free_pose


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--goal", default="bed")
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()

    world = generate_world(args.seed, 3)
    start = random_free_pose(world, np.random.default_rng(args.seed))
    print(f"world {world.shape[1]}x{world.shape[0]} cells, hidden scale factor {world.scale_factor:.3f}")
    print(f"start ({start.x:.2f}, {start.z:.2f}), goal {args.goal}, "
          f"oracle distance {distance_to_goal(world, start, args.goal):.2f} m")

    cfg = Config()
    nav = Navigator(world, args.goal, start, cfg)
    while not nav.done and len(nav.actions) < 300:
        action = nav.step()
        if len(nav.actions) % 20 == 0 or nav.done:
            scale = nav.bank.scale
            goals = query_goal_objects(nav.store, args.goal)
            print(f"step {len(nav.actions):3d}  keyframes {len(nav.bank):3d}  "
                  f"scale {'-' if scale is None else f'{scale:.3f}'}  objects {len(nav.store):2d}  "
                  f"{args.goal} candidates {len(goals)}  last {action.value if action else 'none'}")

    d = distance_to_goal(world, nav.pose, args.goal)
    ok = nav.done and nav.status is None and d <= cfg.episode.success_radius
    status = "success" if ok else (nav.status or ("stop_miss" if nav.done else "step_limit"))
    shortest = shortest_path_length(world, args.goal, (start.x, start.z), cfg.episode.success_radius)
    res = EpisodeResult("demo", args.goal, ok, len(nav.actions), nav.path_length, shortest, d, status,
                        tuple(nav.trajectory), est_trajectory=tuple(nav.est_trajectory))
    print(f"{status} after {res.steps} steps, walked {res.path_length:.2f} m "
          f"(shortest {shortest:.2f} m), SPL term {res.spl_term:.3f}, final distance {d:.2f} m")
    if nav.maps is not None:
        for p in render_episode(res, nav.maps, args.out, "single"):
            print("wrote", p)


if __name__ == "__main__":
    main()
