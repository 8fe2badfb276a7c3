"""Contextual navigation: record a tour, then start near its end.

A scripted tour visits every room and is recorded as a keyframe bank. The
same episodes (same starts, same seeds) are then run twice: once from an
empty memory and once with the recorded bank loaded and relocalized into.
"""
import argparse

from ranger_nav import Config
from ranger_nav.episode import compute_metrics
from ranger_nav.suite import Suite, context_bank, episode_specs, run_suite_episode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--world-seed", type=int, default=4)
    ap.add_argument("--rooms", type=int, default=4)
    args = ap.parse_args()

    worlds = ({"seed": args.world_seed, "rooms": args.rooms},)
    plain = Suite(name="plain", worlds=worlds, mode="near_endpoint")
    ctx = Suite(name="ctx", worlds=worlds, mode="near_endpoint", context=True)
    cfg = Config()

    specs = episode_specs(plain)
    bank = context_bank(specs[0][1].world, ctx, cfg)
    print(f"tour bank: {len(bank)} keyframes, scale {bank.scale:.3f}")

    rows = {"plain": [], "ctx": []}
    for (label, spec) in specs:
        a = run_suite_episode(plain, cfg, label, spec)
        b = run_suite_episode(ctx, cfg, label, spec)
        rows["plain"].append(a)
        rows["ctx"].append(b)
        print(f"{spec.goal:11s} no context: {a.status:12s} {a.steps:3d} steps | "
              f"context: {b.status:12s} {b.steps:3d} steps ({b.context_status})")
    for name, rs in rows.items():
        m = compute_metrics(rs)
        print(f"{name:6s} SR {m.sr:.3f}  SPL {m.spl:.3f}  mean steps {m.mean_steps:.1f}")


if __name__ == "__main__":
    main()
