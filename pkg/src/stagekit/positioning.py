"""Multi-frame actor positioning: fit per-actor scale, per-frame
translation, and per-frame pose under depth, keypoint, trajectory, and
penetration losses.

Stage 1 optimizes {s, t_f} with the full objective and the pose frozen at its
initialization; stage 2 frees {t_f, theta_f}, freezes s, and drops the depth
term so the trajectory regularizer can smooth out per-frame depth noise.
All loss gradients are analytic (reverse-mode through projection, bilinear
sampling, LBS and forward kinematics) and are arbitrated by
optim.check_gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import compositor
from .body import (BodyModel, PoseChainCache, pose_chain_backward,
                   pose_chain_forward, visible_vertices)
from .core import (BEHIND_EPS, CameraModel, DepthRaster, project_point,
                   sample_bilinear, sample_bilinear_stack, unproject_point)
from .depthalign import huber, huber_grad
from .optim import OptimizerState, exponential_to_one_percent, step

log = logging.getLogger(__name__)


class PositioningError(RuntimeError):
    """No observation supports positioning this actor."""


@dataclass
class PositioningConfig:
    lambda_depth: float = 1.0
    lambda_kpt: float = 1.0
    lambda_traj: float = 0.5
    lambda_penet: float = 0.001
    delta2: float | None = None  # defaults to r_stage / 20
    tau: float = 1000.0  # Geman-McClure scale, pixels of L1 reprojection error
    stage1_iters: int = 6000
    stage2_iters: int = 2000
    iters_scale: float = 0.1  # desk-scale budgets by default
    # translation steps track world units; 1e-2*r_stage oscillates at desk
    # image scales (step ~ pixel cell), 2e-3 settles
    lr_translation: float | None = None  # defaults to 2e-3 * r_stage
    lr_pose: float = 3e-3  # scale and rotation parameters
    visibility_refresh: int = 100
    eps_vis_factor: float = 0.01  # eps_vis = factor * r_stage
    min_depth_samples: int = 5  # frames with fewer usable samples skip L_depth

    def effective_iters(self):
        s1 = max(1, int(round(self.stage1_iters * self.iters_scale)))
        s2 = max(1, int(round(self.stage2_iters * self.iters_scale)))
        return s1, s2


@dataclass
class KeypointObservation:
    locations: np.ndarray  # (J,2) pixel coords; rows with confidence 0 may be NaN
    confidences: np.ndarray  # (J,) in [0,1]

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        if np.any(self.confidences < 0) or np.any(self.confidences > 1):
            raise ValueError("keypoint confidences must lie in [0,1]")


@dataclass
class ActorObservations:
    """Per-frame inputs for positioning one actor track."""
    cameras: list  # list[CameraModel], one per frame
    depth_aligned: list  # list[DepthRaster | None]; None = rejected depth fit
    keypoints: list  # list[KeypointObservation | None]
    theta_init: np.ndarray  # (F,J,4) per-frame initial pose quaternions
    center_px: np.ndarray  # (F,2) detection body-center pixel
    masks: list  # list[(H,W) bool], detection support pixels per frame
    r_stage: float

    @property
    def n_frames(self) -> int:
        return len(self.cameras)


@dataclass
class ActorSolution:
    s: float
    translations: np.ndarray  # (F,3)
    quats: np.ndarray  # (F,J,4)
    loss_history: list = field(default_factory=list)  # per-iteration dict rows
    frame_terms: np.ndarray | None = None  # (F,4) final per-frame term values

    def __post_init__(self):
        if not (self.s > 0):
            raise ValueError("actor scale must be positive")


# ---------------------------------------------------------------------------
# loss terms (stage-frame positions in, analytic gradients out)
# ---------------------------------------------------------------------------

def _projection_chain(camera: CameraModel, points):
    """Camera-frame coords, pixel coords, and the Jacobians d(u,v)/d(world)."""
    cam = camera.world_to_camera(points)
    z = cam[:, 2]
    ok = z > BEHIND_EPS
    safe_z = np.where(ok, z, 1.0)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    uv = np.stack([u, v], axis=-1)
    # d(u,v)/d(cam): u row [fx/z, 0, -fx x/z^2], v row [0, fy/z, -fy y/z^2]
    n = cam.shape[0]
    j_uv_cam = np.zeros((n, 2, 3))
    j_uv_cam[:, 0, 0] = camera.fx / safe_z
    j_uv_cam[:, 0, 2] = -camera.fx * cam[:, 0] / safe_z ** 2
    j_uv_cam[:, 1, 1] = camera.fy / safe_z
    j_uv_cam[:, 1, 2] = -camera.fy * cam[:, 1] / safe_z ** 2
    j_uv_world = j_uv_cam @ camera.rotation  # chain through cam = R p + t
    return cam, z, uv, ok, j_uv_world


def loss_depth_actor(verts_stage, d_aligned: DepthRaster, camera: CameraModel,
                     delta2: float) -> float:
    return loss_depth_actor_with_grad(verts_stage, d_aligned, camera, delta2)[0]


def loss_depth_actor_with_grad(verts_stage, d_aligned: DepthRaster,
                               camera: CameraModel, delta2: float):
    """Mean Huber(D_aligned(pi(v)) - v_z; delta2) over usable vertices.

    Returns (value, grad (N,3), n_used); vertices projecting behind the
    camera or onto invalid depth are dropped from both the mean and the
    gradient.
    """
    verts = np.atleast_2d(np.asarray(verts_stage, dtype=np.float64))
    grad = np.zeros_like(verts)
    if verts.shape[0] == 0:
        return 0.0, grad, 0
    cam, z, uv, ok, j_uv = _projection_chain(camera, verts)
    d, d_grad_uv, sampled = sample_bilinear(d_aligned, uv)
    use = ok & sampled
    n = int(use.sum())
    if n == 0:
        log.warning("loss_depth_actor: no usable vertices, term contributes 0")
        return 0.0, grad, 0
    gamma = d[use] - z[use]
    value = float(huber(gamma, delta2).mean())

    dgamma_dw = np.einsum("na,nab->nb", d_grad_uv[use], j_uv[use])
    dgamma_dw -= camera.rotation[2][None, :]  # z = (R p + t)_z
    grad[use] = (huber_grad(gamma, delta2) / n)[:, None] * dgamma_dw
    return value, grad, n


def geman_mcclure(gamma, tau: float):
    g2 = np.square(gamma)
    return g2 / (g2 + tau * tau)


def geman_mcclure_grad(gamma, tau: float):
    t2 = tau * tau
    return 2.0 * gamma * t2 / (np.square(gamma) + t2) ** 2


def loss_keypoint(joints_stage, camera: CameraModel, obs: KeypointObservation,
                  tau: float) -> float:
    return loss_keypoint_with_grad(joints_stage, camera, obs, tau)[0]


def loss_keypoint_with_grad(joints_stage, camera: CameraModel,
                            obs: KeypointObservation, tau: float):
    """Confidence-weighted Geman-McClure penalty on L1 reprojection error.

    Behind-camera joints contribute their saturated value (confidence * 1)
    with zero gradient.  Raises when every confidence is zero.
    """
    joints = np.atleast_2d(np.asarray(joints_stage, dtype=np.float64))
    c = obs.confidences
    if not np.any(c > 0):
        raise ValueError("loss_keypoint: all keypoint confidences are zero")
    grad = np.zeros_like(joints)
    cam, z, uv, ok, j_uv = _projection_chain(camera, joints)

    active = (c > 0) & ok
    err = uv[active] - obs.locations[active]
    gamma = np.abs(err).sum(axis=1)
    value = float((c[active] * geman_mcclure(gamma, tau)).sum())
    value += float(c[(c > 0) & ~ok].sum())  # saturated behind-camera joints

    douter = (c[active] * geman_mcclure_grad(gamma, tau))[:, None]  # (n,1)
    grad[active] = np.einsum("na,nab->nb", douter * np.sign(err), j_uv[active])
    return value, grad


def loss_trajectory(joint_tracks) -> float:
    return loss_trajectory_with_grad(joint_tracks)[0]


def loss_trajectory_with_grad(joint_tracks):
    """Mean squared third difference of joint positions over frames (jerk).

    Third differences annihilate any per-joint trajectory polynomial of
    degree <= 2 in the frame index.
    """
    tracks = np.asarray(joint_tracks, dtype=np.float64)
    if tracks.ndim == 2:  # single joint (F,3)
        tracks = tracks[:, None, :]
    f_total, j_total = tracks.shape[0], tracks.shape[1]
    grad = np.zeros_like(tracks)
    if f_total < 4:
        log.warning("loss_trajectory: fewer than 4 frames, returning 0")
        return 0.0, grad
    d3 = tracks[3:] - 3 * tracks[2:-1] + 3 * tracks[1:-2] - tracks[:-3]
    norm = (f_total - 3) * j_total
    value = float((d3 * d3).sum() / norm)
    scaled = 2.0 * d3 / norm
    grad[3:] += scaled
    grad[2:-1] -= 3.0 * scaled
    grad[1:-2] += 3.0 * scaled
    grad[:-3] -= scaled
    return value, grad


def loss_penetration(verts_stage, stage_depth: DepthRaster, camera: CameraModel) -> float:
    return loss_penetration_with_grad(verts_stage, stage_depth, camera)[0]


def loss_penetration_with_grad(verts_stage, stage_depth: DepthRaster,
                               camera: CameraModel):
    """Hinge on vertices sunk behind the rendered stage surface.

    Vertices over invalid stage-depth pixels are skipped and excluded from
    the normalizing count.
    """
    verts = np.atleast_2d(np.asarray(verts_stage, dtype=np.float64))
    grad = np.zeros_like(verts)
    if verts.shape[0] == 0:
        return 0.0, grad, 0
    cam, z, uv, ok, j_uv = _projection_chain(camera, verts)
    d, d_grad_uv, sampled = sample_bilinear(stage_depth, uv)
    use = ok & sampled
    n = int(use.sum())
    if n == 0:
        return 0.0, grad, 0
    margin = z[use] - d[use]
    value = float(np.maximum(margin, 0.0).sum() / n)

    active = margin > 0
    if np.any(active):
        idx = np.flatnonzero(use)[active]
        dmargin = camera.rotation[2][None, :] \
            - np.einsum("na,nab->nb", d_grad_uv[idx], j_uv[idx])
        grad[idx] = dmargin / n
    return value, grad, n


# ---------------------------------------------------------------------------
# whole-track objective
# ---------------------------------------------------------------------------

def _stage_depth_per_frame(stage_splats, cameras):
    """Render the stage depth once per distinct camera."""
    cache = {}
    out = []
    for cam in cameras:
        key = (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
               cam.rotation.tobytes(), cam.translation.tobytes())
        if key not in cache:
            cache[key] = compositor.render(stage_splats, cam).depth
        out.append(cache[key])
    return out


def _posed_normals(model: BodyModel, cache: PoseChainCache, f: int):
    if model.vertex_normals is None:
        return None
    blended = np.einsum("vj,jab,vb->va", model.lbs_weights, cache.r_glob[f],
                        model.vertex_normals)
    norm = np.linalg.norm(blended, axis=1, keepdims=True)
    return blended / np.maximum(norm, 1e-12)


def _visibility_sets(model: BodyModel, verts_stage, cache, cameras, eps_vis,
                     masks=None):
    """Self-occlusion visibility intersected with the detection mask.

    The detection mask marks pixels where the actor is actually seen, so it
    excludes vertices hidden behind stage objects (couch in front of legs):
    those have no depth evidence and must not feed the penetration hinge.
    """
    sets = []
    for f, cam in enumerate(cameras):
        normals = None if model.faces is not None else _posed_normals(model, cache, f)
        vis = visible_vertices(verts_stage[f], model.faces, cam, eps_vis,
                               normals=normals)
        if masks is not None and vis.size:
            mask = np.asarray(masks[f], dtype=bool)
            uv, _, behind = project_point(cam, verts_stage[f][vis])
            cols = np.clip(np.round(uv[:, 0]).astype(int), 0, cam.width - 1)
            rows = np.clip(np.round(uv[:, 1]).astype(int), 0, cam.height - 1)
            vis = vis[~behind & mask[rows, cols]]
        sets.append(vis)
    return sets


class TrackObjective:
    """Total positioning loss over all frames of one actor, with
    analytic gradients w.r.t. (s, t_f, per-joint quaternions).

    Evaluation is vectorized across frames: visible vertices are flattened
    into (frame, vertex) index arrays and the per-frame rasters/cameras into
    stacks, so one optimizer step costs a handful of array ops regardless of
    the frame count.
    """

    def __init__(self, model: BodyModel, obs: ActorObservations, stage_depths,
                 cfg: PositioningConfig, lambda_depth: float, visibility):
        self.model = model
        self.obs = obs
        self.cfg = cfg
        self.lambda_depth = lambda_depth
        fcount = obs.n_frames
        h, w = stage_depths[0].values.shape

        self.cam_r = np.stack([c.rotation for c in obs.cameras])
        self.cam_t = np.stack([c.translation for c in obs.cameras])
        self.cam_fx = np.array([c.fx for c in obs.cameras])
        self.cam_fy = np.array([c.fy for c in obs.cameras])
        self.cam_cx = np.array([c.cx for c in obs.cameras])
        self.cam_cy = np.array([c.cy for c in obs.cameras])

        self.stage_vals = np.stack([d.values for d in stage_depths])
        self.stage_valid = np.stack([d.validity for d in stage_depths])
        self.aligned_vals = np.full((fcount, h, w), np.nan)
        self.aligned_valid = np.zeros((fcount, h, w), dtype=bool)
        for f, d in enumerate(obs.depth_aligned):
            if d is not None:
                self.aligned_vals[f] = d.values
                self.aligned_valid[f] = d.validity

        self.kpt_locs = np.zeros((fcount, model.n_joints, 2))
        self.kpt_conf = np.zeros((fcount, model.n_joints))
        for f, kp in enumerate(obs.keypoints):
            if kp is not None:
                self.kpt_locs[f] = np.nan_to_num(kp.locations)
                self.kpt_conf[f] = kp.confidences
        self.kpt_frames = np.any(self.kpt_conf > 0, axis=1)

        self.set_visibility(visibility)

    def set_visibility(self, visibility):
        self.visibility = visibility
        self.flat_f = np.concatenate([np.full(v.size, f, dtype=int)
                                      for f, v in enumerate(visibility)]) \
            if visibility else np.zeros(0, dtype=int)
        self.flat_v = np.concatenate([v for v in visibility]) \
            if visibility else np.zeros(0, dtype=int)

    def _project_flat(self, points, f_idx):
        """Vectorized projection of per-frame points with uv Jacobians."""
        cam = (self.cam_r[f_idx] @ points[:, :, None])[:, :, 0] + self.cam_t[f_idx]
        z = cam[:, 2]
        ok = z > BEHIND_EPS
        sz = np.where(ok, z, 1.0)
        fx, fy = self.cam_fx[f_idx], self.cam_fy[f_idx]
        u = fx * cam[:, 0] / sz + self.cam_cx[f_idx]
        v = fy * cam[:, 1] / sz + self.cam_cy[f_idx]
        j_uv_cam = np.zeros((points.shape[0], 2, 3))
        j_uv_cam[:, 0, 0] = fx / sz
        j_uv_cam[:, 0, 2] = -fx * cam[:, 0] / sz ** 2
        j_uv_cam[:, 1, 1] = fy / sz
        j_uv_cam[:, 1, 2] = -fy * cam[:, 1] / sz ** 2
        j_uv = j_uv_cam @ self.cam_r[f_idx]
        return cam, z, np.stack([u, v], axis=-1), ok, j_uv

    def evaluate(self, s: float, t: np.ndarray, quats: np.ndarray,
                 want_grads: bool = True):
        cfg = self.cfg
        delta2 = cfg.delta2 if cfg.delta2 is not None else self.obs.r_stage / 20.0
        fcount = self.obs.n_frames
        cache = pose_chain_forward(self.model, quats)
        verts = s * cache.verts + t[:, None, :]
        joints = s * cache.joints + t[:, None, :]

        grad_verts = np.zeros_like(verts)
        grad_joints = np.zeros_like(joints)
        ray_z = self.cam_r[:, 2, :]  # d z_cam / d world point, per frame

        fi, vi = self.flat_f, self.flat_v
        l_depth = 0.0
        l_penet = 0.0
        if fi.size:
            sub = verts[fi, vi]
            cam, z, uv, in_front, j_uv = self._project_flat(sub, fi)

            if self.lambda_depth > 0:
                d, dg, ok = sample_bilinear_stack(self.aligned_vals,
                                                  self.aligned_valid, fi, uv)
                use = ok & in_front
                cnt = np.bincount(fi[use], minlength=fcount)
                # starved frames skip the depth term: a couple of (usually
                # silhouette-adjacent) samples must not dominate a frame
                use &= cnt[fi] >= self.cfg.min_depth_samples
                if np.any(use):
                    gamma = d[use] - z[use]
                    cnt = np.bincount(fi[use], minlength=fcount)
                    sums = np.bincount(fi[use], weights=huber(gamma, delta2),
                                       minlength=fcount)
                    frames_used = cnt > 0
                    n_frames = int(frames_used.sum())
                    l_depth = float((sums[frames_used] / cnt[frames_used]).mean())
                    if want_grads:
                        dgam = np.einsum("ma,mab->mb", dg[use], j_uv[use]) \
                            - ray_z[fi[use]]
                        wgt = huber_grad(gamma, delta2) \
                            * (self.lambda_depth / (n_frames * cnt[fi[use]]))
                        np.add.at(grad_verts, (fi[use], vi[use]), wgt[:, None] * dgam)

            if cfg.lambda_penet > 0:
                d, dg, ok = sample_bilinear_stack(self.stage_vals,
                                                  self.stage_valid, fi, uv)
                use = ok & in_front
                if np.any(use):
                    margin = z[use] - d[use]
                    cnt = np.bincount(fi[use], minlength=fcount)
                    sums = np.bincount(fi[use], weights=np.maximum(margin, 0.0),
                                       minlength=fcount)
                    frames_used = cnt > 0
                    n_frames = int(frames_used.sum())
                    l_penet = float((sums[frames_used] / cnt[frames_used]).mean())
                    if want_grads and np.any(margin > 0):
                        act = np.flatnonzero(use)[margin > 0]
                        dmarg = ray_z[fi[act]] - np.einsum("ma,mab->mb", dg[act],
                                                           j_uv[act])
                        wgt = cfg.lambda_penet / (n_frames * cnt[fi[act]])
                        np.add.at(grad_verts, (fi[act], vi[act]),
                                  wgt[:, None] * dmarg)

        l_kpt = 0.0
        if np.any(self.kpt_frames):
            jcount = self.model.n_joints
            jf = np.repeat(np.arange(fcount), jcount)
            camj, zj, uvj, okj, j_uvj = self._project_flat(
                joints.reshape(-1, 3), jf)
            conf = self.kpt_conf.ravel()
            active = (conf > 0) & okj
            err = uvj - self.kpt_locs.reshape(-1, 2)
            gamma = np.abs(err).sum(axis=1)
            vals = np.where(active, conf * geman_mcclure(gamma, cfg.tau), 0.0)
            vals += np.where((conf > 0) & ~okj, conf, 0.0)  # saturated behind camera
            per_frame = vals.reshape(fcount, jcount).sum(axis=1)
            n_frames = int(self.kpt_frames.sum())
            l_kpt = float(per_frame[self.kpt_frames].sum() / n_frames)
            if want_grads and np.any(active):
                douter = conf[active] * geman_mcclure_grad(gamma[active], cfg.tau) \
                    * (cfg.lambda_kpt / n_frames)
                gj = np.einsum("ma,mab->mb", douter[:, None] * np.sign(err[active]),
                               j_uvj[active])
                flat_grad = np.zeros((fcount * jcount, 3))
                flat_grad[active] = gj
                grad_joints += flat_grad.reshape(fcount, jcount, 3)

        l_traj, traj_grad = loss_trajectory_with_grad(joints)

        terms = {"l_depth": l_depth, "l_kpt": l_kpt, "l_traj": l_traj,
                 "l_penet": l_penet}
        total = (self.lambda_depth * l_depth + cfg.lambda_kpt * l_kpt
                 + cfg.lambda_traj * l_traj + cfg.lambda_penet * l_penet)
        if not want_grads:
            return total, terms, None

        grad_joints += cfg.lambda_traj * traj_grad
        grad_s = float(np.sum(grad_verts * cache.verts)
                       + np.sum(grad_joints * cache.joints))
        grad_t = grad_verts.sum(axis=1) + grad_joints.sum(axis=1)
        grad_quats = pose_chain_backward(self.model, cache,
                                         s * grad_verts, s * grad_joints)
        return total, terms, {"s": grad_s, "t": grad_t, "quats": grad_quats}

    def refresh_visibility(self, s, t, quats, eps_vis):
        cache = pose_chain_forward(self.model, quats)
        verts = s * cache.verts + t[:, None, :]
        self.set_visibility(_visibility_sets(self.model, verts, cache,
                                             self.obs.cameras, eps_vis,
                                             masks=self.obs.masks))


# ---------------------------------------------------------------------------
# initialization and the two-stage optimization schedule
# ---------------------------------------------------------------------------

def initialize_translations(model: BodyModel, obs: ActorObservations,
                            s0: float = 1.0) -> np.ndarray:
    """Back-project each frame's detection center at the median aligned depth
    of its mask pixels; frames without depth borrow the nearest initialized
    frame."""
    fcount = obs.n_frames
    cache = pose_chain_forward(model, obs.theta_init)
    t_init = np.full((fcount, 3), np.nan)
    for f in range(fcount):
        depth = obs.depth_aligned[f]
        if depth is None:
            continue
        sel = np.asarray(obs.masks[f], dtype=bool) & depth.validity
        if not sel.any():
            continue
        z_med = float(np.median(depth.values[sel]))
        center_world = unproject_point(obs.cameras[f], obs.center_px[f], z_med)
        t_init[f] = center_world - s0 * cache.joints[f, model.root]
    missing = np.flatnonzero(np.isnan(t_init[:, 0]))
    have = np.flatnonzero(~np.isnan(t_init[:, 0]))
    if have.size == 0:
        return np.zeros((fcount, 3))
    for f in missing:
        t_init[f] = t_init[have[np.argmin(np.abs(have - f))]]
    return t_init


def position_actor(model: BodyModel, obs: ActorObservations, stage_splats,
                   cfg: PositioningConfig = PositioningConfig()) -> ActorSolution:
    """Two-stage joint optimization of one actor track (all frames coupled
    through the trajectory term)."""
    fcount = obs.n_frames
    has_depth = any(d is not None for d in obs.depth_aligned)
    has_kpt = any(k is not None and np.any(k.confidences > 0) for k in obs.keypoints)
    if not has_depth and not has_kpt:
        raise PositioningError("no usable depth fit and no keypoints; cannot position")

    r_stage = obs.r_stage
    eps_vis = cfg.eps_vis_factor * r_stage
    lr_trans = cfg.lr_translation if cfg.lr_translation is not None else 2e-3 * r_stage
    s1_iters, s2_iters = cfg.effective_iters()

    s = 1.0
    t = initialize_translations(model, obs, s0=s)
    quats = np.array(obs.theta_init, dtype=np.float64, copy=True)

    stage_depths = _stage_depth_per_frame(stage_splats, obs.cameras)
    objective = TrackObjective(model=model, obs=obs, stage_depths=stage_depths,
                               cfg=cfg, lambda_depth=cfg.lambda_depth,
                               visibility=[np.arange(model.n_vertices)] * fcount)
    history = []

    def run_stage(stage_idx, iters, optimize_pose_quats):
        nonlocal s, t, quats
        lam_depth = cfg.lambda_depth if stage_idx == 1 else 0.0
        objective.lambda_depth = lam_depth
        sched_t = exponential_to_one_percent(lr_trans, iters)
        sched_p = exponential_to_one_percent(cfg.lr_pose, iters)
        adam_t = OptimizerState.for_params(t.ravel())
        pose_dim = quats.size if optimize_pose_quats else 1
        adam_p = OptimizerState.for_params(np.zeros(pose_dim))
        for it in range(iters):
            if it % cfg.visibility_refresh == 0:
                objective.refresh_visibility(s, t, quats, eps_vis)
            total, terms, grads = objective.evaluate(s, t, quats)
            history.append({"iter": len(history), "l_depth": terms["l_depth"],
                            "l_kpt": terms["l_kpt"], "l_traj": terms["l_traj"],
                            "l_penet": terms["l_penet"], "total": total})
            t = step(adam_t, t.ravel(), grads["t"].ravel(),
                     sched_t.lr(it)).reshape(fcount, 3)
            if optimize_pose_quats:
                quats = step(adam_p, quats.ravel(), grads["quats"].ravel(),
                             sched_p.lr(it)).reshape(quats.shape)
                norms = np.linalg.norm(quats, axis=-1, keepdims=True)
                quats = quats / np.maximum(norms, 1e-12)
            else:
                s_new = float(step(adam_p, np.array([s]), np.array([grads["s"]]),
                                   sched_p.lr(it))[0])
                if s_new <= 1e-6:
                    log.warning("scale update hit positivity floor; clamping")
                    s_new = 1e-6
                s = s_new

    run_stage(1, s1_iters, optimize_pose_quats=False)
    run_stage(2, s2_iters, optimize_pose_quats=True)

    objective.lambda_depth = cfg.lambda_depth
    objective.refresh_visibility(s, t, quats, eps_vis)
    frame_terms = np.zeros((fcount, 4))
    cache = pose_chain_forward(model, quats)
    verts = s * cache.verts + t[:, None, :]
    joints = s * cache.joints + t[:, None, :]
    delta2 = cfg.delta2 if cfg.delta2 is not None else r_stage / 20.0
    for f in range(fcount):
        vis = objective.visibility[f]
        cam = obs.cameras[f]
        if obs.depth_aligned[f] is not None and vis.size > 0:
            frame_terms[f, 0] = loss_depth_actor(verts[f, vis], obs.depth_aligned[f],
                                                 cam, delta2)
        kp = obs.keypoints[f]
        if kp is not None and np.any(kp.confidences > 0):
            frame_terms[f, 1] = loss_keypoint(joints[f], cam, kp, cfg.tau)
        if vis.size > 0:
            frame_terms[f, 3] = loss_penetration(verts[f, vis], stage_depths[f], cam)
    frame_terms[:, 2] = loss_trajectory(joints)

    return ActorSolution(s=s, translations=t, quats=quats,
                         loss_history=history, frame_terms=frame_terms)
