"""Demo 3 - articulated body posing and visibility.

Builds the 24-joint capsule humanoid, waves an arm through linear blend
skinning, places it on the stage, and classifies self-occluded vertices
with the z-buffer test.
"""

import numpy as np

from stagekit.body import PoseParams, StagePlacement, lbs_pose, to_stage, visible_vertices
from stagekit.core import look_at_camera, quat_from_axis_angle
from stagekit.synth import base_pose_quats, build_humanoid_body

body = build_humanoid_body()
print(f"humanoid: {body.n_vertices} vertices, {body.n_joints} joints, "
      f"{len(body.faces)} faces")

rest, rest_joints = lbs_pose(body, PoseParams.identity(body.n_joints))
print(f"rest pose reproduces canonical vertices: "
      f"max |dv| = {np.abs(rest - body.canonical_vertices).max():.1e}")

# swing the right arm down by rotating its shoulder (joint 17)
quats = base_pose_quats()
quats[17] = quat_from_axis_angle([0, 0, 1], -1.2)
posed, joints = lbs_pose(body, PoseParams(quats=quats))
wrist = 21
print(f"right wrist, T-ish rest pose: y = {rest_joints[wrist][1]:+.2f}")
print(f"right wrist, arm swung down:  y = {joints[wrist][1]:+.2f}")

placement = StagePlacement(s=1.1, t=np.array([0.0, 0.0, 3.5]))
staged = to_stage(posed, placement)
cam = look_at_camera([0.3, 1.3, 0.3], [0, 1, 3.5], fx=110, width=96, height=96)
vis = visible_vertices(staged, body.faces, cam, eps_vis=0.04)
print(f"\nplaced at {placement.t} with scale {placement.s}: "
      f"{vis.size}/{body.n_vertices} vertices visible from the camera")
