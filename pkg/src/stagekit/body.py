"""Canonical body posing via linear blend skinning, stage placement, and
self-occlusion visibility classification.

Joint rotations are stored as unit quaternions; forward kinematics over the
parent tree derives the per-joint rigid transforms that LBS blends.  The
pose chain (quaternions -> posed vertices/joints) ships with a hand-derived
reverse-mode backward so positioning can optimize pose parameters; the
finite-difference checker in optim arbitrates it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CameraModel, DepthRaster, project_point, quat_normalize,
                   quat_to_matrix)

WEIGHT_TOL = 1e-6


@dataclass
class BodyModel:
    canonical_vertices: np.ndarray  # (V,3)
    canonical_joints: np.ndarray  # (J,3)
    lbs_weights: np.ndarray  # (V,J), rows sum to 1
    parents: np.ndarray  # (J,) parent index, -1 for the single root
    faces: np.ndarray | None = None  # (T,3) int triangles, for visibility
    vertex_normals: np.ndarray | None = None  # (V,3) canonical, fallback visibility

    def __post_init__(self):
        self.canonical_vertices = np.asarray(self.canonical_vertices, dtype=np.float64)
        self.canonical_joints = np.asarray(self.canonical_joints, dtype=np.float64)
        self.lbs_weights = np.asarray(self.lbs_weights, dtype=np.float64)
        self.parents = np.asarray(self.parents, dtype=int)
        if self.faces is not None:
            self.faces = np.asarray(self.faces, dtype=int)
        if self.vertex_normals is not None:
            self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64)

        if np.any(self.lbs_weights < 0):
            raise ValueError("LBS weights must be non-negative")
        rows = self.lbs_weights.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > WEIGHT_TOL):
            bad = int(np.argmax(np.abs(rows - 1.0)))
            raise ValueError(f"LBS weight row {bad} sums to {rows[bad]:.8f}, not 1")
        roots = np.flatnonzero(self.parents < 0)
        if roots.size != 1:
            raise ValueError(f"parent tree must have exactly one root, got {roots.size}")
        self.root = int(roots[0])
        self.topo_order = self._topological_order()

    def _topological_order(self):
        order = [self.root]
        seen = {self.root}
        pending = [j for j in range(self.n_joints) if j != self.root]
        while pending:
            progress = False
            remaining = []
            for j in pending:
                if int(self.parents[j]) in seen:
                    order.append(j)
                    seen.add(j)
                    progress = True
                else:
                    remaining.append(j)
            if not progress:
                raise ValueError("joint parent graph is cyclic or disconnected")
            pending = remaining
        return np.asarray(order, dtype=int)

    @property
    def n_joints(self) -> int:
        return self.canonical_joints.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.canonical_vertices.shape[0]


@dataclass
class PoseParams:
    quats: np.ndarray  # (J,4) unit quaternions wxyz, local per-joint rotations

    def __post_init__(self):
        self.quats = quat_normalize(np.asarray(self.quats, dtype=np.float64))

    @classmethod
    def identity(cls, n_joints: int) -> "PoseParams":
        q = np.zeros((n_joints, 4))
        q[:, 0] = 1.0
        return cls(quats=q)

    def rotation_matrices(self) -> np.ndarray:
        return quat_to_matrix(self.quats)


@dataclass(frozen=True)
class StagePlacement:
    s: float
    t: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if not (self.s > 0):
            raise ValueError("placement scale must be positive")


def to_stage(vertices, placement: StagePlacement) -> np.ndarray:
    """Map posed points into stage coordinates: s*v + t."""
    return placement.s * np.asarray(vertices, dtype=np.float64) + placement.t


# ---------------------------------------------------------------------------
# differentiable pose chain: raw quaternions -> posed vertices and joints
# ---------------------------------------------------------------------------

@dataclass
class PoseChainCache:
    q_raw: np.ndarray  # (F,J,4)
    q_hat: np.ndarray
    norms: np.ndarray  # (F,J,1)
    r_loc: np.ndarray  # (F,J,3,3)
    r_glob: np.ndarray
    joints: np.ndarray  # (F,J,3) posed joint positions (pre-placement)
    verts: np.ndarray  # (F,V,3)


def _weighted_local(model: BodyModel) -> np.ndarray:
    """w_ij * (c_i - J_j), flattened to (J*3, V) for BLAS contraction."""
    cached = getattr(model, "_weighted_local_cache", None)
    if cached is None:
        local = model.canonical_vertices[:, None, :] - model.canonical_joints[None, :, :]
        y = model.lbs_weights[:, :, None] * local  # (V,J,3)
        cached = y.reshape(model.n_vertices, -1).T.copy()
        model._weighted_local_cache = cached
    return cached


def pose_chain_forward(model: BodyModel, quats_raw) -> PoseChainCache:
    """Pose all frames at once: FK over the parent tree, then LBS.

    quats_raw is (F,J,4) and need not be normalized; normalization is part
    of the differentiated chain.
    """
    q_raw = np.asarray(quats_raw, dtype=np.float64)
    if q_raw.ndim == 2:
        q_raw = q_raw[None]
    fcount, jcount = q_raw.shape[0], q_raw.shape[1]
    norms = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    q_hat = q_raw / norms
    r_loc = quat_to_matrix(q_hat)

    joints_c = model.canonical_joints
    r_glob = np.empty_like(r_loc)
    posed = np.empty((fcount, jcount, 3))
    for j in model.topo_order:
        p = int(model.parents[j])
        if p < 0:
            r_glob[:, j] = r_loc[:, j]
            posed[:, j] = joints_c[j]
        else:
            r_glob[:, j] = r_glob[:, p] @ r_loc[:, j]
            offset = joints_c[j] - joints_c[p]
            posed[:, j] = posed[:, p] + r_glob[:, p] @ offset

    # v_i = sum_j w_ij (R_glob_j (c_i - J_j) + P_j), contracted via matmul
    y_flat = _weighted_local(model)  # (J*3, V)
    r_flat = r_glob.transpose(0, 2, 1, 3).reshape(fcount, 3, jcount * 3)
    verts = (r_flat @ y_flat).transpose(0, 2, 1) + model.lbs_weights @ posed
    return PoseChainCache(q_raw=q_raw, q_hat=q_hat, norms=norms, r_loc=r_loc,
                          r_glob=r_glob, joints=posed, verts=verts)


def _rotation_grad_to_quat(grad_r, q_hat):
    """Contract dL/dR with dR/dq for unit quaternions (batched)."""
    w, x, y, z = q_hat[..., 0], q_hat[..., 1], q_hat[..., 2], q_hat[..., 3]
    G = grad_r
    dw = 2 * (z * (G[..., 1, 0] - G[..., 0, 1])
              + y * (G[..., 0, 2] - G[..., 2, 0])
              + x * (G[..., 2, 1] - G[..., 1, 2]))
    dx = 2 * (y * (G[..., 0, 1] + G[..., 1, 0])
              + z * (G[..., 0, 2] + G[..., 2, 0])
              + w * (G[..., 2, 1] - G[..., 1, 2])
              - 2 * x * (G[..., 1, 1] + G[..., 2, 2]))
    dy = 2 * (x * (G[..., 0, 1] + G[..., 1, 0])
              + z * (G[..., 1, 2] + G[..., 2, 1])
              + w * (G[..., 0, 2] - G[..., 2, 0])
              - 2 * y * (G[..., 0, 0] + G[..., 2, 2]))
    dz = 2 * (x * (G[..., 0, 2] + G[..., 2, 0])
              + y * (G[..., 1, 2] + G[..., 2, 1])
              + w * (G[..., 1, 0] - G[..., 0, 1])
              - 2 * z * (G[..., 0, 0] + G[..., 1, 1]))
    return np.stack([dw, dx, dy, dz], axis=-1)


def pose_chain_backward(model: BodyModel, cache: PoseChainCache,
                        grad_verts=None, grad_joints=None) -> np.ndarray:
    """Reverse-mode gradients of the pose chain w.r.t. raw quaternions.

    grad_verts (F,V,3) and grad_joints (F,J,3) are dL/d(posed vertices) and
    dL/d(posed joints); either may be None.  Returns (F,J,4).
    """
    fcount, jcount = cache.q_raw.shape[:2]
    w = model.lbs_weights
    joints_c = model.canonical_joints

    grad_rglob = np.zeros((fcount, jcount, 3, 3))
    grad_posed = np.zeros((fcount, jcount, 3))
    if grad_joints is not None:
        grad_posed += grad_joints
    if grad_verts is not None:
        y_flat = _weighted_local(model)  # (J*3, V)
        # dL/dR_glob[f,j,a,b] = sum_v grad_verts[f,v,a] * w_vj (c_v - J_j)_b
        gr = grad_verts.transpose(0, 2, 1) @ y_flat.T  # (F,3,J*3)
        grad_rglob += gr.reshape(fcount, 3, jcount, 3).transpose(0, 2, 1, 3)
        grad_posed += w.T @ grad_verts

    grad_rloc = np.zeros_like(grad_rglob)
    for j in model.topo_order[::-1]:
        p = int(model.parents[j])
        if p < 0:
            grad_rloc[:, j] += grad_rglob[:, j]
        else:
            rp = cache.r_glob[:, p]
            grad_rloc[:, j] += rp.transpose(0, 2, 1) @ grad_rglob[:, j]
            grad_rglob[:, p] += grad_rglob[:, j] @ cache.r_loc[:, j].transpose(0, 2, 1)
            offset = joints_c[j] - joints_c[p]
            grad_rglob[:, p] += grad_posed[:, j][..., :, None] * offset[None, None, :]
            grad_posed[:, p] += grad_posed[:, j]

    grad_qhat = _rotation_grad_to_quat(grad_rloc, cache.q_hat)
    dot = np.sum(grad_qhat * cache.q_hat, axis=-1, keepdims=True)
    return (grad_qhat - dot * cache.q_hat) / cache.norms


def lbs_pose(model: BodyModel, pose: PoseParams):
    """Posed vertices and joints for one pose (weight-blended joint transforms)."""
    cache = pose_chain_forward(model, pose.quats[None])
    return cache.verts[0], cache.joints[0]


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

def rasterize_mesh_depth(vertices, faces, camera: CameraModel) -> DepthRaster:
    """Z-buffer of the mesh front surface (perspective-correct interpolation)."""
    uv, z, behind = project_point(camera, vertices)
    h, w = camera.height, camera.width
    zbuf = np.full((h, w), np.inf)
    for tri in faces:
        if np.any(behind[tri]):
            continue
        pts = uv[tri]
        c0 = max(int(np.floor(pts[:, 0].min())), 0)
        c1 = min(int(np.ceil(pts[:, 0].max())) + 1, w)
        r0 = max(int(np.floor(pts[:, 1].min())), 0)
        r1 = min(int(np.ceil(pts[:, 1].max())) + 1, h)
        if c0 >= c1 or r0 >= r1:
            continue
        (x0, y0), (x1, y1), (x2, y2) = pts
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        gc, gr = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
        w0 = ((x1 - gc) * (y2 - gr) - (x2 - gc) * (y1 - gr)) / area
        w1 = ((x2 - gc) * (y0 - gr) - (x0 - gc) * (y2 - gr)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        inv_z = w0 / z[tri[0]] + w1 / z[tri[1]] + w2 / z[tri[2]]
        depth = np.where(inside & (inv_z > 0), 1.0 / np.maximum(inv_z, 1e-12), np.inf)
        patch = zbuf[r0:r1, c0:c1]
        np.minimum(patch, depth, out=patch)
    validity = np.isfinite(zbuf)
    return DepthRaster(values=np.where(validity, zbuf, np.nan), validity=validity)


def visible_vertices(vertices, faces, camera: CameraModel, eps_vis: float,
                     normals=None) -> np.ndarray:
    """Indices of vertices visible from the camera.

    With faces: a vertex is visible iff it projects inside the image, sits in
    front of the camera, and its depth is within eps_vis of the mesh z-buffer
    at its pixel.  Without faces, a normal-facing test on supplied per-vertex
    normals is used instead.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    uv, z, behind = project_point(camera, vertices)
    in_image = (~behind & (uv[:, 0] >= 0) & (uv[:, 0] <= camera.width - 1)
                & (uv[:, 1] >= 0) & (uv[:, 1] <= camera.height - 1))
    if faces is None:
        if normals is None:
            return np.flatnonzero(in_image)
        cam_center = -camera.rotation.T @ camera.translation
        view = vertices - cam_center
        facing = np.einsum("va,va->v", np.asarray(normals, dtype=np.float64), view) < 0
        return np.flatnonzero(in_image & facing)

    zbuf = rasterize_mesh_depth(vertices, faces, camera)
    cols = np.clip(np.round(uv[:, 0]).astype(int), 0, camera.width - 1)
    rows = np.clip(np.round(uv[:, 1]).astype(int), 0, camera.height - 1)
    front = np.where(zbuf.validity[rows, cols], zbuf.values[rows, cols], np.inf)
    visible = in_image & (z <= front + eps_vis)
    return np.flatnonzero(visible)
