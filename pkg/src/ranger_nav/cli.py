"""Command line: run one episode, run a suite, record a context tour, generate worlds."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .config import Config
from .episode import EpisodeSpec, compute_metrics, record_context_video, run_episode, scripted_tour
from .geometry import Pose
from .render import render_episode
from .suite import (Suite, load_suite, run_batch, save_suite, write_metrics_csv,
                    write_run_manifest)
from .world import Action, generate_world, load_world, random_free_pose, save_world


def parse_int_list(text: str) -> list:
    """'0-4,7,9' -> [0, 1, 2, 3, 4, 7, 9]"""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else part[1:].split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def parse_start(text: str, world) -> Pose:
    """'x,z[,yaw_deg]' in metres on the world grid."""
    v = [float(a) for a in text.split(",")]
    if len(v) not in (2, 3):
        raise argparse.ArgumentTypeError("start must be x,z or x,z,yaw_deg")
    yaw = math.radians(v[2]) if len(v) == 3 else 0.0
    return Pose(v[0], world.camera_height, v[1], yaw, 0.0)


def _config(path) -> Config:
    return Config.load(path) if path else Config()


def cmd_run(args) -> int:
    cfg = _config(args.config)
    world = load_world(args.world)
    if args.start:
        start = parse_start(args.start, world)
    else:
        start = random_free_pose(world, np.random.default_rng(args.seed))
    spec = EpisodeSpec(world, args.goal, start, args.max_steps, args.context, args.seed,
                       args.episode_id or os.path.splitext(os.path.basename(args.world))[0])
    res, nav = run_episode(spec, cfg, keep_agent=True)
    summary = {"episode_id": res.episode_id, "goal": res.goal, "status": res.status,
               "success": res.success, "steps": res.steps,
               "path_length": round(res.path_length, 4),
               "shortest_length": round(res.shortest_length, 4),
               "spl_term": round(res.spl_term, 4), "dtg": round(res.dtg, 4),
               "context_status": res.context_status}
    if args.render_dir and nav.maps is not None:
        summary["images"] = render_episode(res, nav.maps, args.render_dir, res.episode_id or "episode")
    print(json.dumps(summary, indent=1))
    return 0


def cmd_batch(args) -> int:
    cfg = _config(args.config)
    suite = load_suite(args.suite) if args.suite else Suite()

    def progress(r):
        if args.verbose:
            print(f"{r.episode_id} {r.status} steps={r.steps} spl={r.spl_term:.3f}", file=sys.stderr)

    labelled = run_batch(suite, cfg, args.jobs, progress)
    write_metrics_csv(labelled, args.out)
    manifest = args.manifest or os.path.splitext(args.out)[0] + "_manifest.json"
    write_run_manifest(suite, cfg, labelled, manifest)
    m = compute_metrics([r for _, r in labelled])
    print(f"episodes {m.n}  SR {m.sr:.4f}  SPL {m.spl:.4f}  DTG {m.mean_dtg:.3f}  steps {m.mean_steps:.2f}")
    for key, want in sorted(suite.targets.items()):
        got = getattr(m, key, None)
        if got is not None:
            print(f"target {key} >= {want}: {'pass' if got >= want else 'FAIL'} ({got:.4f})")
    return 0


def cmd_record(args) -> int:
    cfg = _config(args.config)
    world = load_world(args.world)
    if args.start:
        start = parse_start(args.start, world)
    else:
        start = random_free_pose(world, np.random.default_rng(args.seed))
    if args.script:
        with open(args.script) as fh:
            actions = [Action(a) for a in json.load(fh)]
    else:
        actions = scripted_tour(world, start)
    bank = record_context_video(world, actions, args.out, start, args.seed, cfg)
    print(f"{len(actions)} actions, {len(bank)} keyframes -> {args.out}")
    print("endpoint", [round(v, 4) for v in bank.meta["endpoint"]])
    return 0


def cmd_gen(args) -> int:
    seeds = parse_int_list(args.seeds)
    rooms = parse_int_list(args.rooms)
    os.makedirs(args.out_dir, exist_ok=True)
    entries = []
    for k, s in enumerate(seeds):
        n = rooms[k % len(rooms)] if args.cycle_rooms else rooms[s % len(rooms)]
        w = generate_world(s, n)
        name = f"w{s:03d}r{n}.json"
        save_world(w, os.path.join(args.out_dir, name))
        entries.append({"path": name})
        print(name, f"{w.shape[1]}x{w.shape[0]} cells, sigma {w.scale_factor:.3f}")
    save_suite(Suite(name=args.name, worlds=tuple(entries)), os.path.join(args.out_dir, "suite.json"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ranger-nav", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a single episode")
    p.add_argument("--world", required=True, help="world JSON")
    p.add_argument("--goal", required=True)
    p.add_argument("--start", help="x,z[,yaw_deg]; random free pose when omitted")
    p.add_argument("--max-steps", type=int, default=300)
    p.add_argument("--context", help="context bank archive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episode-id", default="")
    p.add_argument("--render-dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a suite manifest")
    p.add_argument("--suite", help="suite JSON (default: built-in 20-world suite)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="metrics.csv")
    p.add_argument("--manifest", help="run manifest path (default: next to --out)")
    p.add_argument("--config")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("record-context", help="record a context bank from a tour")
    p.add_argument("--world", required=True)
    p.add_argument("--script", help="JSON list of action names (default: scripted room tour)")
    p.add_argument("--start", help="x,z[,yaw_deg]")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("gen-worlds", help="generate worlds and a suite manifest")
    p.add_argument("--seeds", default="0-19", help="e.g. 0-19 or 1,4,9")
    p.add_argument("--rooms", default="3-5", help="room counts, chosen by seed modulo")
    p.add_argument("--cycle-rooms", action="store_true", help="assign room counts by position instead")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="generated")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
