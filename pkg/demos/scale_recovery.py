"""Metric scale from one look at the floor.

Perception returns clouds divided by a hidden per-world factor. Fitting a
plane to the lowest points and comparing the camera's height above it with
the known 0.88 m recovers that factor, even with a third of the points
replaced by clutter.
"""
import dataclasses
import math

import numpy as np

from ranger_nav.geometry import PointCloud, Pose
from ranger_nav.perception import DriftState, observe
from ranger_nav.scale import EstimationError, InsufficientDataError, estimate_scale
from ranger_nav.world import generate_world, random_free_pose


def main():
    world = generate_world(7, 3)
    rng = np.random.default_rng(0)
    p = random_free_pose(world, rng)
    for pitch in (0.0, -60.0):
        pose = Pose(p.x, p.y, p.z, p.yaw, math.radians(pitch))
        for sigma in (0.2, 1.0, 5.0):
            obs = observe(dataclasses.replace(world, scale_factor=sigma), pose, DriftState(pose), 0)
            pts = obs.cloud.points.copy()
            k = int(0.3 * len(pts))
            idx = rng.choice(len(pts), k, replace=False)
            pts[idx] = rng.uniform(pts.min(0), pts.max(0), (k, 3))
            try:
                m = estimate_scale(PointCloud(pts, obs.cloud.confidences), obs.estimated_pose.position)
                print(f"pitch {pitch:5.0f}  sigma {sigma:4.1f}  recovered {m.scale:.4f}  "
                      f"error {abs(m.scale / sigma - 1):.1e}")
            except (EstimationError, InsufficientDataError) as e:
                print(f"pitch {pitch:5.0f}  sigma {sigma:4.1f}  no estimate: {e}")


if __name__ == "__main__":
    main()
