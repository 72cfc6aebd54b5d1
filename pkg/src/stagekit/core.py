"""Domain types and pinhole camera geometry shared by all modules.

World units are metric. Camera frames look down +z (depth grows into the
screen); pixel u is the column coordinate, v the row coordinate, and the
raster value at [row, col] sits at continuous coordinates (u=col, v=row).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BEHIND_EPS = 1e-9  # camera-frame z at or below this is "behind camera"
ORTHO_TOL = 1e-6


class DegenerateInputError(ValueError):
    """Raised when an operation receives input it cannot meaningfully process."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z convention, unit norm)
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = _as_f64(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateInputError("zero-norm quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion; batched over leading axes."""
    q = _as_f64(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _as_f64(axis)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_mul(q1, q2) -> np.ndarray:
    """Hamilton product q1 * q2 (batched over leading axes)."""
    q1 = _as_f64(q1)
    q2 = _as_f64(q2)
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_slerp(qa, qb, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two unit quaternions."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:  # take the short way around
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(qa + alpha * (qb - qa))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sa = np.sin((1.0 - alpha) * theta) / np.sin(theta)
    sb = np.sin(alpha * theta) / np.sin(theta)
    return quat_normalize(sa * qa + sb * qb)


def _check_rotation(R: np.ndarray, what: str) -> None:
    if R.shape != (3, 3):
        raise ValueError(f"{what}: expected 3x3 rotation, got {R.shape}")
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise ValueError(f"{what}: not a proper rotation (orthonormality error {err:.2e})")


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3,3) world-to-camera
    translation: np.ndarray  # (3,) world-to-camera
    width: int
    height: int
    frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_f64(self.rotation))
        object.__setattr__(self, "translation", _as_f64(self.translation).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point outside the image")
        _check_rotation(self.rotation, "CameraModel.rotation")
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    def world_to_camera(self, points) -> np.ndarray:
        p = _as_f64(points)
        return p @ self.rotation.T + self.translation


def project_point(camera: CameraModel, points):
    """Project world points to pixels.

    Returns (uv, z, behind): uv is (...,2) pixel coordinates, z the
    camera-frame depth and behind a bool mask flagging z <= BEHIND_EPS.
    Pixel coordinates of behind-camera points are unreliable; callers must
    skip them rather than clamp.
    """
    p = _as_f64(points)
    single = p.ndim == 1
    cam = camera.world_to_camera(np.atleast_2d(p))
    z = cam[:, 2]
    behind = z <= BEHIND_EPS
    safe_z = np.where(behind, 1.0, z)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    uv = np.stack([u, v], axis=-1)
    if single:
        return uv[0], float(z[0]), bool(behind[0])
    return uv, z, behind


def unproject_point(camera: CameraModel, uv, z):
    """Inverse of project_point at a given camera-frame depth."""
    single = _as_f64(uv).ndim == 1
    uv = np.atleast_2d(_as_f64(uv))
    z = np.atleast_1d(_as_f64(z))
    x = (uv[:, 0] - camera.cx) / camera.fx * z
    y = (uv[:, 1] - camera.cy) / camera.fy * z
    cam = np.stack([x, y, z], axis=-1)
    world = (cam - camera.translation) @ camera.rotation
    return world[0] if single else world


def look_at_camera(eye, target, up=(0.0, 1.0, 0.0), fx=100.0, fy=None,
                   width=64, height=64, frame_index=0) -> CameraModel:
    """Camera at `eye` looking toward `target` (+z forward, image v opposite `up`)."""
    eye = _as_f64(eye)
    fwd = _as_f64(target) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = _as_f64(up)
    down = -(upv - np.dot(upv, fwd) * fwd)
    if np.linalg.norm(down) < 1e-9:  # looking straight along up
        alt = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        down = -(alt - np.dot(alt, fwd) * fwd)
    down /= np.linalg.norm(down)
    right = np.cross(down, fwd)
    R = np.stack([right, down, fwd])  # rows: camera axes in world coords
    t = -R @ eye
    fy = fx if fy is None else fy
    return CameraModel(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                       rotation=R, translation=t,
                       width=width, height=height, frame_index=frame_index)


# ---------------------------------------------------------------------------
# splats
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Splat:
    center: np.ndarray  # (3,) world units
    rotation: np.ndarray  # (4,) unit quaternion wxyz
    scale: np.ndarray  # (3,) positive
    color: np.ndarray  # (3,) in [0,1]
    opacity: float  # in [0,1]

    def __post_init__(self):
        object.__setattr__(self, "center", _as_f64(self.center).reshape(3))
        object.__setattr__(self, "rotation", _as_f64(self.rotation).reshape(4))
        object.__setattr__(self, "scale", _as_f64(self.scale).reshape(3))
        object.__setattr__(self, "color", _as_f64(self.color).reshape(3))
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValueError("splat rotation must be a unit quaternion")
        if np.any(self.scale <= 0):
            raise ValueError("splat scale components must be positive")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity outside [0,1]")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color outside [0,1]")

    def covariance(self) -> np.ndarray:
        R = quat_to_matrix(self.rotation)
        RS = R * self.scale  # columns scaled: R @ diag(s)
        return RS @ RS.T


STAGE_TAG = "stage"


def actor_tag(n: int) -> str:
    return f"actor:{int(n)}"


@dataclass
class SplatSet:
    splats: list  # list[Splat], composition order preserved
    tag: str = STAGE_TAG

    def __len__(self):
        return len(self.splats)

    def centers(self) -> np.ndarray:
        if not self.splats:
            return np.zeros((0, 3))
        return np.stack([s.center for s in self.splats])

    def arrays(self):
        """Columnar view: centers (K,3), scales (K,3), colors (K,3), opacities (K,)."""
        k = len(self.splats)
        out = (np.zeros((k, 3)), np.zeros((k, 3)), np.zeros((k, 3)), np.zeros(k))
        for i, s in enumerate(self.splats):
            out[0][i] = s.center
            out[1][i] = s.scale
            out[2][i] = s.color
            out[3][i] = s.opacity
        return out


def composite_scene(stage: SplatSet, actors) -> list:
    """Stage set union actor sets; tags must be disjoint."""
    sets = [stage, *actors]
    tags = [s.tag for s in sets]
    if len(set(tags)) != len(tags):
        raise ValueError(f"composite tags not disjoint: {tags}")
    return sets


# ---------------------------------------------------------------------------
# depth rasters
# ---------------------------------------------------------------------------

@dataclass
class DepthRaster:
    values: np.ndarray  # (H,W) metric depth, camera frame
    validity: np.ndarray  # (H,W) bool

    def __post_init__(self):
        self.values = _as_f64(self.values)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.values.shape != self.validity.shape or self.values.ndim != 2:
            raise ValueError("values/validity must be matching 2-d arrays")
        bad = self.validity & ~(np.isfinite(self.values) & (self.values > 0))
        if np.any(bad):
            raise ValueError("valid depth entries must be finite and > 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_values(cls, values) -> "DepthRaster":
        values = _as_f64(values)
        validity = np.isfinite(values) & (values > 0)
        return cls(values=values, validity=validity)

    def copy(self) -> "DepthRaster":
        return DepthRaster(self.values.copy(), self.validity.copy())


def sample_bilinear(raster: DepthRaster, uv):
    """Bilinearly sample depth at continuous pixel coordinates.

    A sample is usable only when all four touched pixels are valid and the
    point lies inside [0, W-1] x [0, H-1].  Returns (value, grad_uv, ok)
    where grad_uv is the (...,2) derivative of the sample w.r.t. (u, v);
    it is piecewise constant inside each pixel cell.
    """
    uv = _as_f64(uv)
    single = uv.ndim == 1
    uv2 = np.atleast_2d(uv)
    h, w = raster.values.shape
    u, v = uv2[:, 0], uv2[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    c0 = np.clip(np.floor(u).astype(int), 0, w - 2) if w > 1 else np.zeros(len(u), int)
    r0 = np.clip(np.floor(v).astype(int), 0, h - 2) if h > 1 else np.zeros(len(v), int)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = u - c0
    fv = v - r0

    val = raster.values
    ok = inside & raster.validity[r0, c0] & raster.validity[r0, c1] \
        & raster.validity[r1, c0] & raster.validity[r1, c1]

    d00, d01 = val[r0, c0], val[r0, c1]
    d10, d11 = val[r1, c0], val[r1, c1]
    top = d00 * (1 - fu) + d01 * fu
    bot = d10 * (1 - fu) + d11 * fu
    value = top * (1 - fv) + bot * fv
    du = (d01 - d00) * (1 - fv) + (d11 - d10) * fv
    dv = bot - top
    grad = np.stack([du, dv], axis=-1)

    value = np.where(ok, value, np.nan)
    grad = np.where(ok[:, None], grad, 0.0)
    if single:
        return float(value[0]), grad[0], bool(ok[0])
    return value, grad, ok


def sample_bilinear_stack(values, validity, frame_idx, uv):
    """sample_bilinear over a stack of rasters (F,H,W), one frame per sample.

    Same contract as sample_bilinear; frame_idx selects the raster for each
    row of uv.
    """
    values = _as_f64(values)
    fcount, h, w = values.shape
    uv = np.atleast_2d(_as_f64(uv))
    fi = np.asarray(frame_idx, dtype=int)
    u, v = uv[:, 0], uv[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    c0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    r0 = np.clip(np.floor(v).astype(int), 0, max(h - 2, 0))
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = u - c0
    fv = v - r0

    ok = inside & validity[fi, r0, c0] & validity[fi, r0, c1] \
        & validity[fi, r1, c0] & validity[fi, r1, c1]
    d00, d01 = values[fi, r0, c0], values[fi, r0, c1]
    d10, d11 = values[fi, r1, c0], values[fi, r1, c1]
    top = d00 * (1 - fu) + d01 * fu
    bot = d10 * (1 - fu) + d11 * fu
    value = np.where(ok, top * (1 - fv) + bot * fv, np.nan)
    du = (d01 - d00) * (1 - fv) + (d11 - d10) * fv
    dv = bot - top
    grad = np.where(ok[:, None], np.stack([du, dv], axis=-1), 0.0)
    return value, grad, ok


# ---------------------------------------------------------------------------
# scene radius
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneRadius:
    r_stage: float

    def __post_init__(self):
        if not (self.r_stage > 0):
            raise ValueError("r_stage must be positive")


def compute_scene_radius(stage_points) -> SceneRadius:
    """Max distance of the stage points from their centroid."""
    pts = _as_f64(stage_points)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DegenerateInputError("need at least one stage point")
    centroid = pts.mean(axis=0)
    r = float(np.linalg.norm(pts - centroid, axis=1).max())
    if r <= 0.0:
        raise DegenerateInputError("stage points are coincident; radius undefined")
    return SceneRadius(r_stage=r)


# ---------------------------------------------------------------------------
# DPT1 binary depth format
# ---------------------------------------------------------------------------
# 4-byte ASCII magic "DPT1", u32le width, u32le height, then width*height
# f32le values in row-major order; invalid pixels stored as quiet NaN.

DPT1_MAGIC = b"DPT1"


def write_dpt1(path, raster: DepthRaster) -> None:
    data = raster.values.astype("<f4")
    data = np.where(raster.validity, data, np.float32(np.nan))
    with open(path, "wb") as f:
        f.write(DPT1_MAGIC)
        f.write(struct.pack("<II", raster.width, raster.height))
        f.write(data.tobytes(order="C"))


def read_dpt1(path) -> DepthRaster:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DPT1_MAGIC:
            raise ValueError(f"bad DPT1 magic: {magic!r}")
        w, h = struct.unpack("<II", f.read(8))
        buf = f.read(4 * w * h)
    if len(buf) != 4 * w * h:
        raise ValueError("truncated DPT1 payload")
    values = np.frombuffer(buf, dtype="<f4").reshape(h, w).astype(np.float64)
    validity = np.isfinite(values)
    values = np.where(validity, values, np.nan)
    return DepthRaster(values=values, validity=validity)
