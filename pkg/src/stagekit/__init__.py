"""stagekit: desk-scale splat-stage compositing and actor positioning.

Library layout mirrors the pipeline: core geometry types, an Adam optimizer
with a finite-difference gradient checker, per-frame depth alignment, splat
compositing and stage losses, body posing, the multi-frame actor positioning
optimizer, cross-shot tracking, foreground masking, residual appearance
refinement, and a synthetic ground-truth generator that makes all of it
testable.  `stagekit.pipeline` / the `stagekit` CLI chain the stages over a
serialized scene bundle.
"""

from .core import (CameraModel, DepthRaster, SceneRadius, Splat, SplatSet,
                   compute_scene_radius, project_point, read_dpt1,
                   unproject_point, write_dpt1)
from .depthalign import AffineDepthFit, HuberParams, align_depth, apply_fit, huber
from .compositor import RenderedFrame, StageLossWeights, loss_depth_logl1, loss_stage, loss_tv, render
from .body import BodyModel, PoseParams, StagePlacement, lbs_pose, to_stage, visible_vertices
from .positioning import (ActorObservations, ActorSolution, KeypointObservation,
                          PositioningConfig, loss_depth_actor, loss_keypoint,
                          loss_penetration, loss_trajectory, position_actor)
from .tracking import (ActorTrack, ShotBoundary, compute_mted_mped,
                       extrapolate_track, interpolate_pose, match_actors)
from .masking import ForegroundMask, foreground_mask, masked_actor_loss
from .refine import EncodingSpec, FittingNetwork, apply_residuals, residuals, train_refinement
from .synth import SceneSpec, SyntheticScene, generate_scene, render_observations

__version__ = "0.1.0"
