"""Ground-truth synthetic scene generator.

Builds a room-box stage (floor, walls, optional couch occluder) with splats
lying exactly on analytic surfaces, articulated capsule-mesh actors with
piecewise-quadratic trajectories, shot-segmented camera paths, and noiseless
or corrupted observations (mono-style depth with a known affine warp,
2D keypoints, detections) whose ground truth is recorded separately.

Depth observations come from this module's own ray-cast + z-buffer renderer,
and the color oracle is an independent full-image compositor, so nothing
here depends on the rendering path under test.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .body import BodyModel, pose_chain_forward, rasterize_mesh_depth
from .compositor import RenderedFrame
from .core import (CameraModel, DepthRaster, Splat, SplatSet, actor_tag,
                   compute_scene_radius, look_at_camera, project_point,
                   quat_from_axis_angle, quat_mul)
from .positioning import ActorObservations, KeypointObservation

MIN_VALID_ALPHA = 0.01


# ---------------------------------------------------------------------------
# scene specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    fx: float = 70.0
    n_frames: int = 24
    n_shots: int = 2
    n_actors: int = 1
    couch: bool = False
    # observation corruption (all zero = noiseless)
    depth_sigma: float = 0.0  # per-pixel metric depth noise
    depth_frame_jitter: float = 0.0  # per-frame constant depth bias, actor pixels
    depth_actor_bias: float = 0.0  # constant push applied to actor pixels
    outlier_rate: float = 0.0  # fraction of stage-point pixels grossly corrupted
    keypoint_sigma: float = 0.0  # pixel jitter on 2D keypoints
    pose_noise: float = 0.0  # radians of per-joint init pose corruption
    affine_a: float = 2.0  # known mono-depth warp: aligned = a*mono + b
    affine_b: float = 0.5
    occlusion_windows: tuple = ()  # ((actor, f_start, f_end_exclusive), ...)

    def __post_init__(self):
        if self.n_frames < 1 or self.n_shots < 1 or self.n_actors < 0:
            raise ValueError("invalid scene size")
        if self.n_shots > self.n_frames:
            raise ValueError("more shots than frames")
        if self.affine_a <= 0:
            raise ValueError("depth warp scale must be positive")


# stage box extents, world units (y up, floor at y=0); cameras live in the
# empty z < ROOM_Z0 apron so no surface sits at grazing range
ROOM_X = 3.0
ROOM_Z0 = 2.0
ROOM_Z = 6.0
ROOM_H = 3.0
# tall-backed couch; the couch-scene actor stands just clear of its face, so
# a modest depth corruption pushes the fitted body into it
COUCH_BOX = ((-1.1, 0.0, 3.25), (1.1, 1.35, 3.95))  # (lo, hi) corners
COUCH_ACTOR_GAP = 0.12
COUCH_ACTOR_HOVER = 0.06  # keeps ground truth clear of floor-contact ties


@dataclass
class GroundTruth:
    scales: np.ndarray  # (A,)
    translations: np.ndarray  # (A,F,3)
    quats: np.ndarray  # (A,F,J,4)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    seed: int
    bodies: list  # BodyModel per actor
    stage_splats: SplatSet
    cameras: list  # CameraModel per frame
    shot_ranges: list  # [(start, end_exclusive), ...]
    gt: GroundTruth
    r_stage: float
    actor_colors: np.ndarray  # (A,3)
    couch: bool


@dataclass
class Observations:
    """Per-frame corrupted observations plus the corruption bookkeeping."""
    mono: list  # DepthRaster per frame (known affine warp of true depth)
    depth_truth: list  # DepthRaster per frame, uncorrupted surface depth
    affine: list  # (a*, b*) per frame
    stage_points: list  # (N,3) static stage correspondences per frame
    keypoints: list  # [frame][actor] -> KeypointObservation | None
    theta_init: np.ndarray  # (A,F,J,4)
    center_px: np.ndarray  # (A,F,2)
    actor_masks: list  # [frame][actor] -> (H,W) bool
    stage_masks: list  # [frame] -> (H,W) bool  (no actor covers the pixel)
    images: list  # (H,W,3) color frames


# ---------------------------------------------------------------------------
# articulated capsule-mesh humanoid (24 joints, SMPL-like tree)
# ---------------------------------------------------------------------------

_JOINT_POS = np.array([
    [0.00, 0.95, 0.00],   # 0 pelvis
    [-0.10, 0.90, 0.00],  # 1 hip.L
    [0.10, 0.90, 0.00],   # 2 hip.R
    [0.00, 1.05, 0.00],   # 3 spine1
    [-0.11, 0.50, 0.00],  # 4 knee.L
    [0.11, 0.50, 0.00],   # 5 knee.R
    [0.00, 1.15, 0.00],   # 6 spine2
    [-0.12, 0.10, 0.00],  # 7 ankle.L
    [0.12, 0.10, 0.00],   # 8 ankle.R
    [0.00, 1.25, 0.00],   # 9 spine3
    [-0.12, 0.03, 0.10],  # 10 foot.L
    [0.12, 0.03, 0.10],   # 11 foot.R
    [0.00, 1.42, 0.00],   # 12 neck
    [-0.07, 1.36, 0.00],  # 13 collar.L
    [0.07, 1.36, 0.00],   # 14 collar.R
    [0.00, 1.58, 0.00],   # 15 head
    [-0.20, 1.36, 0.00],  # 16 shoulder.L
    [0.20, 1.36, 0.00],   # 17 shoulder.R
    [-0.44, 1.36, 0.00],  # 18 elbow.L
    [0.44, 1.36, 0.00],   # 19 elbow.R
    [-0.68, 1.36, 0.00],  # 20 wrist.L
    [0.68, 1.36, 0.00],   # 21 wrist.R
    [-0.76, 1.36, 0.00],  # 22 hand.L
    [0.76, 1.36, 0.00],   # 23 hand.R
])

_PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                     9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

_BONE_RADII = {
    (0, 1): 0.1, (0, 2): 0.1, (0, 3): 0.13, (3, 6): 0.13, (6, 9): 0.12,
    (1, 4): 0.085, (2, 5): 0.085, (4, 7): 0.07, (5, 8): 0.07,
    (7, 10): 0.055, (8, 11): 0.055, (9, 12): 0.07, (12, 15): 0.1,
    (13, 16): 0.06, (14, 17): 0.06, (16, 18): 0.06, (17, 19): 0.06,
    (18, 20): 0.05, (19, 21): 0.05, (20, 22): 0.045, (21, 23): 0.045,
}


def _ring_basis(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def build_humanoid_body(rings_per_bone: int = 3, ring_verts: int = 6,
                        min_bone_length: float = 0.05) -> BodyModel:
    """Capsule-tube mesh over a 24-joint tree with hand-authored LBS weights.

    Tube vertices blend from the bone's parent joint toward its child joint
    along the bone; tubes do not share vertices across bones.
    """
    joints = _JOINT_POS
    n_joints = joints.shape[0]
    verts, weights, normals, faces = [], [], [], []
    for j in range(n_joints):
        p = int(_PARENTS[j])
        if p < 0:
            continue
        a, b = joints[p], joints[j]
        axis = b - a
        length = np.linalg.norm(axis)
        if length < min_bone_length:
            continue
        radius = _BONE_RADII.get((p, j), 0.05)
        e1, e2 = _ring_basis(axis)
        ring_start = len(verts)
        for r in range(rings_per_bone):
            lam = (r + 0.5) / rings_per_bone
            center = a + lam * (b - a)
            w_child = 0.5 * max(0.0, (lam - 0.5) / 0.5)
            for k in range(ring_verts):
                ang = 2 * np.pi * (k + 0.5 * r) / ring_verts
                n = np.cos(ang) * e1 + np.sin(ang) * e2
                verts.append(center + radius * n)
                normals.append(n)
                w = np.zeros(n_joints)
                w[p] = 1.0 - w_child
                w[j] = w_child
                weights.append(w)
        for r in range(rings_per_bone - 1):
            for k in range(ring_verts):
                i0 = ring_start + r * ring_verts + k
                i1 = ring_start + r * ring_verts + (k + 1) % ring_verts
                i2 = i0 + ring_verts
                i3 = i1 + ring_verts
                faces.append([i0, i1, i2])
                faces.append([i1, i3, i2])
    return BodyModel(canonical_vertices=np.asarray(verts),
                     canonical_joints=joints,
                     lbs_weights=np.asarray(weights),
                     parents=_PARENTS,
                     faces=np.asarray(faces, dtype=int),
                     vertex_normals=np.asarray(normals))


def base_pose_quats(n_joints: int = 24) -> np.ndarray:
    """Rest-like pose with slightly lowered arms (identity everywhere else)."""
    q = np.zeros((n_joints, 4))
    q[:, 0] = 1.0
    q[16] = quat_from_axis_angle([0, 0, 1], -0.5)  # shoulder.L down
    q[17] = quat_from_axis_angle([0, 0, 1], 0.5)  # shoulder.R down
    return q


def build_actor_splats(verts_stage, color, tag: str, splat_scale: float = 0.04,
                       opacity: float = 0.92) -> SplatSet:
    """One small isotropic splat per posed body vertex."""
    color = np.asarray(color, dtype=np.float64)
    splats = [Splat(center=v, rotation=[1, 0, 0, 0],
                    scale=[splat_scale] * 3, color=color, opacity=opacity)
              for v in np.asarray(verts_stage, dtype=np.float64)]
    return SplatSet(splats=splats, tag=tag)


# ---------------------------------------------------------------------------
# stage: splats on analytic surfaces + ray-cast depth
# ---------------------------------------------------------------------------

def _surface_grid(lo_u, hi_u, lo_v, hi_v, n_u, n_v):
    us = np.linspace(lo_u, hi_u, n_u)
    vs = np.linspace(lo_v, hi_v, n_v)
    return np.meshgrid(us, vs, indexing="ij")


def build_stage_splats(couch: bool, rng) -> SplatSet:
    splats = []

    # opacity/footprint chosen so unnormalized front-to-back depth compositing
    # saturates (accumulated alpha ~ 1) and reads the true surface depth
    def add_plane(point_fn, n_u, n_v, extent_u, extent_v, base_color, scale):
        uu, vv = _surface_grid(extent_u[0], extent_u[1], extent_v[0], extent_v[1],
                               n_u, n_v)
        for u, v in zip(uu.ravel(), vv.ravel()):
            center = point_fn(u, v)
            tint = 0.25 * rng.random(3)
            color = np.clip(np.asarray(base_color) + tint, 0, 1)
            splats.append(Splat(center=center, rotation=[1, 0, 0, 0],
                                scale=[scale] * 3, color=color, opacity=0.998))

    # floor, back wall, side walls
    add_plane(lambda u, v: np.array([u, 0.0, v]), 40, 27,
              (-ROOM_X, ROOM_X), (ROOM_Z0, ROOM_Z), [0.35, 0.3, 0.25], 0.15)
    add_plane(lambda u, v: np.array([u, v, ROOM_Z]), 40, 20,
              (-ROOM_X, ROOM_X), (0.0, ROOM_H), [0.5, 0.5, 0.6], 0.15)
    add_plane(lambda u, v: np.array([-ROOM_X, u, v]), 20, 27,
              (0.0, ROOM_H), (ROOM_Z0, ROOM_Z), [0.45, 0.35, 0.3], 0.15)
    add_plane(lambda u, v: np.array([ROOM_X, u, v]), 20, 27,
              (0.0, ROOM_H), (ROOM_Z0, ROOM_Z), [0.3, 0.4, 0.45], 0.15)

    if couch:
        (x0, y0, z0), (x1, y1, z1) = COUCH_BOX
        add_plane(lambda u, v: np.array([u, v, z0]), 26, 16,
                  (x0, x1), (y0, y1), [0.55, 0.2, 0.2], 0.09)  # front face
        add_plane(lambda u, v: np.array([u, y1, v]), 26, 9,
                  (x0, x1), (z0, z1), [0.6, 0.25, 0.25], 0.09)  # top
        add_plane(lambda u, v: np.array([x0, u, v]), 16, 9,
                  (y0, y1), (z0, z1), [0.5, 0.2, 0.2], 0.09)
        add_plane(lambda u, v: np.array([x1, u, v]), 16, 9,
                  (y0, y1), (z0, z1), [0.5, 0.2, 0.2], 0.09)
    return SplatSet(splats=splats, tag="stage")


def ray_cast_stage_depth(camera: CameraModel, couch: bool) -> DepthRaster:
    """Exact per-pixel camera depth of the room-box (and couch) surfaces."""
    h, w = camera.height, camera.width
    gc, gr = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dir_cam = np.stack([(gc - camera.cx) / camera.fx,
                        (gr - camera.cy) / camera.fy,
                        np.ones_like(gc)], axis=-1)  # z component 1 -> t == camera depth
    dirs = dir_cam @ camera.rotation  # rows of R are camera axes: R^T d
    origin = -camera.rotation.T @ camera.translation
    best = np.full((h, w), np.inf)

    def consider(t, inside):
        hit = (t > 1e-6) & inside
        np.minimum(best, np.where(hit, t, np.inf), out=best)

    def plane_hits(axis, value, lo_a, hi_a, axis_a, lo_b, hi_b, axis_b):
        denom = dirs[..., axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (value - origin[axis]) / denom
        pa = origin[axis_a] + t * dirs[..., axis_a]
        pb = origin[axis_b] + t * dirs[..., axis_b]
        inside = (pa >= lo_a) & (pa <= hi_a) & (pb >= lo_b) & (pb <= hi_b) \
            & np.isfinite(t)
        consider(t, inside)

    plane_hits(1, 0.0, -ROOM_X, ROOM_X, 0, ROOM_Z0, ROOM_Z, 2)  # floor
    plane_hits(2, ROOM_Z, -ROOM_X, ROOM_X, 0, 0.0, ROOM_H, 1)  # back wall
    plane_hits(0, -ROOM_X, 0.0, ROOM_H, 1, ROOM_Z0, ROOM_Z, 2)  # left wall
    plane_hits(0, ROOM_X, 0.0, ROOM_H, 1, ROOM_Z0, ROOM_Z, 2)  # right wall
    if couch:
        lo = np.asarray(COUCH_BOX[0])
        hi = np.asarray(COUCH_BOX[1])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
        tmin = np.minimum(t0, t1).max(axis=-1)
        tmax = np.maximum(t0, t1).min(axis=-1)
        consider(tmin, (tmax >= tmin) & np.isfinite(tmin))

    validity = np.isfinite(best)
    return DepthRaster(values=np.where(validity, best, np.nan), validity=validity)


# ---------------------------------------------------------------------------
# independent full-image splat compositor (the render oracle)
# ---------------------------------------------------------------------------

def reference_render(splat_sets, camera: CameraModel) -> RenderedFrame:
    """Brute-force per-pixel compositor: no truncation, no windows; splats
    evaluated over the whole image in depth order."""
    sets = [splat_sets] if isinstance(splat_sets, SplatSet) else list(splat_sets)
    splats = [sp for s in sets for sp in s.splats]
    h, w = camera.height, camera.width
    gc, gr = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    trans = np.ones((h, w))
    depth = np.zeros((h, w))
    color = np.zeros((h, w, 3))

    centers = np.stack([sp.center for sp in splats])
    uv, z, behind = project_point(camera, centers)
    for k in np.argsort(z, kind="stable"):
        if behind[k]:
            continue
        sp = splats[k]
        sigma = float(np.mean(sp.scale)) * camera.fx / z[k]
        if sigma <= 0:
            continue
        r2 = (gc - uv[k, 0]) ** 2 + (gr - uv[k, 1]) ** 2
        alpha = sp.opacity * np.exp(-0.5 * r2 / (sigma * sigma))
        weight = alpha * trans
        depth += z[k] * weight
        color += sp.color[None, None, :] * weight[:, :, None]
        trans *= 1.0 - alpha

    acc = 1.0 - trans
    valid = acc >= MIN_VALID_ALPHA
    return RenderedFrame(
        depth=DepthRaster(values=np.where(valid, depth, np.nan), validity=valid),
        color=color, accumulated_alpha=acc)


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _shot_ranges(n_frames: int, n_shots: int):
    edges = np.linspace(0, n_frames, n_shots + 1).astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(n_shots)]


def _shot_cameras(spec: SceneSpec, shot_ranges, rng):
    cams = []
    for k, (f0, f1) in enumerate(shot_ranges):
        side = -1.0 if k % 2 == 0 else 1.0
        eye = np.array([side * (0.6 + 0.5 * rng.random()),
                        1.15 + 0.2 * rng.random(),
                        0.1 + 0.3 * rng.random()])
        target = np.array([side * 0.3, 1.0, 3.7])
        cam = look_at_camera(eye, target, fx=spec.fx,
                             width=spec.width, height=spec.height)
        for f in range(f0, f1):
            cams.append(replace(cam, frame_index=f))
    return cams


def _actor_trajectories(spec: SceneSpec, shot_ranges, rng):
    """Per-shot quadratic translation segments, position-continuous across
    boundaries (so jerk vanishes inside each segment)."""
    n = spec.n_actors
    f_total = spec.n_frames
    trans = np.zeros((n, f_total, 3))
    for a in range(n):
        x0 = np.array([-1.0 + 2.0 * a / max(1, n - 1) if n > 1 else 0.15,
                       0.0, 3.6 + 0.4 * rng.random()])
        if spec.couch:
            x0 = np.array([0.0, COUCH_ACTOR_HOVER,
                           COUCH_BOX[0][2] - COUCH_ACTOR_GAP])
        pos = x0.copy()
        for (f0, f1) in shot_ranges:
            length = max(f1 - f0, 1)
            vel = np.array([0.010 * (rng.random() - 0.5), 0.0,
                            0.006 * (rng.random() - 0.5)])
            acc = np.array([0.0004 * (rng.random() - 0.5), 0.0,
                            0.0002 * (rng.random() - 0.5)])
            if spec.couch:
                vel = np.zeros(3)
                acc = np.zeros(3)
            steps = np.arange(length)[:, None]
            seg = pos[None, :] + vel[None, :] * steps + acc[None, :] * steps ** 2
            trans[a, f0:f1] = seg
            pos = seg[-1]
        trans[a, :, 0] = np.clip(trans[a, :, 0], -ROOM_X + 1.0, ROOM_X - 1.0)
        trans[a, :, 2] = np.clip(trans[a, :, 2], ROOM_Z0 + 0.6, ROOM_Z - 1.0)
    return trans


def generate_scene(spec: SceneSpec, seed: int = 0) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    shot_ranges = _shot_ranges(spec.n_frames, spec.n_shots)
    stage = build_stage_splats(spec.couch, rng)
    cameras = _shot_cameras(spec, shot_ranges, rng)
    r_stage = compute_scene_radius(stage.centers()).r_stage

    bodies = [build_humanoid_body() for _ in range(spec.n_actors)]
    n_joints = _JOINT_POS.shape[0]
    scales = 0.95 + 0.12 * rng.random(spec.n_actors)
    trans = _actor_trajectories(spec, shot_ranges, rng)
    quats = np.zeros((spec.n_actors, spec.n_frames, n_joints, 4))
    base = base_pose_quats(n_joints)
    for a in range(spec.n_actors):
        yaw = quat_from_axis_angle([0, 1, 0], np.pi + 0.2 * (rng.random() - 0.5))
        pose = base.copy()
        pose[0] = quat_mul(yaw, pose[0])  # root faces the cameras
        quats[a, :] = pose[None, :, :]

    colors = 0.25 + 0.6 * rng.random((spec.n_actors, 3))
    return SyntheticScene(spec=spec, seed=seed, bodies=bodies, stage_splats=stage,
                          cameras=cameras, shot_ranges=shot_ranges,
                          gt=GroundTruth(scales=scales, translations=trans,
                                         quats=quats),
                          r_stage=r_stage, actor_colors=colors, couch=spec.couch)


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

def gt_actor_geometry(scene: SyntheticScene, a: int):
    """Posed + placed vertices and joints of actor a over all frames."""
    cache = pose_chain_forward(scene.bodies[a], scene.gt.quats[a])
    s = scene.gt.scales[a]
    verts = s * cache.verts + scene.gt.translations[a][:, None, :]
    joints = s * cache.joints + scene.gt.translations[a][:, None, :]
    return verts, joints


def _dilate(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    out = mask.copy()
    for _ in range(steps):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _occluded(spec: SceneSpec, a: int, f: int) -> bool:
    return any(a == wa and w0 <= f < w1 for wa, w0, w1 in spec.occlusion_windows)


def render_observations(scene: SyntheticScene, seed: int = 0,
                        want_images: bool = True) -> Observations:
    spec = scene.spec
    rng = np.random.default_rng(seed + 1)
    f_total = spec.n_frames
    n_actors = spec.n_actors
    n_joints = _JOINT_POS.shape[0]

    actor_geo = [gt_actor_geometry(scene, a) for a in range(n_actors)]

    mono_list, truth_list, affine, stage_pts = [], [], [], []
    keypoints = []
    actor_masks, stage_masks, images = [], [], []
    theta_init = np.zeros((n_actors, f_total, n_joints, 4))
    center_px = np.zeros((n_actors, f_total, 2))

    for f in range(f_total):
        cam = scene.cameras[f]
        stage_depth = ray_cast_stage_depth(cam, scene.couch)
        depth = stage_depth.values.copy()
        valid = stage_depth.validity.copy()

        frame_actor_masks = []
        for a in range(n_actors):
            verts_f = actor_geo[a][0][f]
            zbuf = rasterize_mesh_depth(verts_f, scene.bodies[a].faces, cam)
            in_front = zbuf.validity & (~valid | (np.where(zbuf.validity, zbuf.values, np.inf)
                                                  < np.where(valid, depth, np.inf)))
            depth = np.where(in_front, zbuf.values, depth)
            valid |= zbuf.validity
            frame_actor_masks.append(in_front)
        truth = DepthRaster(values=np.where(valid, depth, np.nan), validity=valid)
        truth_list.append(truth)
        actor_masks.append(frame_actor_masks)
        any_actor = np.zeros_like(valid)
        for m in frame_actor_masks:
            any_actor |= m
        stage_masks.append(~any_actor)

        # real depth estimators are unreliable at actor silhouettes: the 1px
        # background ring next to each silhouette goes invalid; interior
        # actor pixels stay pure surface samples
        sil = np.zeros_like(valid)
        for m in frame_actor_masks:
            sil |= _dilate(m, 1) & ~m
        obs_valid = valid & ~sil

        depth_obs = depth.copy()
        if spec.depth_sigma > 0:
            depth_obs = depth_obs + rng.normal(0.0, spec.depth_sigma, depth_obs.shape)
        if spec.depth_frame_jitter > 0 or spec.depth_actor_bias != 0.0:
            bias = rng.normal(0.0, spec.depth_frame_jitter) if spec.depth_frame_jitter > 0 else 0.0
            bias += spec.depth_actor_bias
            depth_obs = np.where(any_actor, depth_obs + bias, depth_obs)
        a_star, b_star = spec.affine_a, spec.affine_b
        mono_vals = (depth_obs - b_star) / a_star
        mono = DepthRaster(values=np.where(obs_valid, mono_vals, np.nan),
                           validity=obs_valid & np.isfinite(mono_vals)
                           & (mono_vals > 0))
        affine.append((a_star, b_star))

        # static stage correspondences: back-projected stage pixel centers;
        # outliers are gross point-depth errors (bad triangulations)
        stage_sel = obs_valid & stage_masks[f]
        rs, cs = np.nonzero(stage_sel)
        stride = max(1, rs.size // 600)
        rs, cs = rs[::stride], cs[::stride]
        z_pts = depth[rs, cs].copy()
        if spec.outlier_rate > 0 and rs.size:
            n_out = int(np.floor(spec.outlier_rate * rs.size))
            pick = rng.choice(rs.size, size=n_out, replace=False)
            z_pts[pick] += 5.0 * scene.r_stage
        uv = np.stack([cs, rs], axis=-1).astype(np.float64)
        pts = np.stack([
            (uv[:, 0] - cam.cx) / cam.fx, (uv[:, 1] - cam.cy) / cam.fy,
            np.ones(len(uv))], axis=-1) * z_pts[:, None]
        pts = (pts - cam.translation) @ cam.rotation
        stage_pts.append(pts)
        mono_list.append(mono)

        frame_kps = []
        for a in range(n_actors):
            joints_f = actor_geo[a][1][f]
            uv_j, z_j, behind_j = project_point(cam, joints_f)
            conf = np.ones(n_joints)
            conf[behind_j] = 0.0
            if _occluded(spec, a, f):
                conf[:] = 0.0
            locs = uv_j.copy()
            if spec.keypoint_sigma > 0:
                locs = locs + rng.normal(0.0, spec.keypoint_sigma, locs.shape)
            frame_kps.append(KeypointObservation(locations=locs, confidences=conf))

            root_uv, _, _ = project_point(cam, joints_f[scene.bodies[a].root])
            center_px[a, f] = root_uv
            q_gt = scene.gt.quats[a, f]
            if spec.pose_noise > 0:
                axes = rng.normal(size=(n_joints, 3))
                axes /= np.linalg.norm(axes, axis=1, keepdims=True)
                angles = rng.normal(0.0, spec.pose_noise, n_joints)
                noise = np.stack([quat_from_axis_angle(ax, an)
                                  for ax, an in zip(axes, angles)])
                theta_init[a, f] = quat_mul(noise, q_gt)
            else:
                theta_init[a, f] = q_gt
        keypoints.append(frame_kps)

        if want_images:
            actor_splats = [build_actor_splats(actor_geo[a][0][f], scene.actor_colors[a],
                                               actor_tag(a)) for a in range(n_actors)]
            images.append(reference_render([scene.stage_splats, *actor_splats], cam).color)

    return Observations(mono=mono_list, depth_truth=truth_list, affine=affine,
                        stage_points=stage_pts, keypoints=keypoints,
                        theta_init=theta_init, center_px=center_px,
                        actor_masks=actor_masks, stage_masks=stage_masks,
                        images=images)


def actor_observations(scene: SyntheticScene, obs: Observations, a: int,
                       aligned: list, frames=None) -> ActorObservations:
    """Assemble positioning inputs for one actor over a frame range."""
    frames = range(scene.spec.n_frames) if frames is None else frames
    frames = list(frames)
    return ActorObservations(
        cameras=[scene.cameras[f] for f in frames],
        depth_aligned=[aligned[f] for f in frames],
        keypoints=[obs.keypoints[f][a] for f in frames],
        theta_init=obs.theta_init[a, frames],
        center_px=obs.center_px[a, frames],
        masks=[obs.actor_masks[f][a] for f in frames],
        r_stage=scene.r_stage,
    )
