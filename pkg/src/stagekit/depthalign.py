"""Per-frame affine alignment of monocular depth to the metric camera frame.

Fits depth_aligned = a * depth_mono + b against the camera-frame depths of a
sparse stage point cloud under a Huber penalty, solved by iteratively
reweighted least squares from the closed-form L2 initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraModel, DegenerateInputError, DepthRaster, project_point, sample_bilinear

MIN_CORRESPONDENCES = 10
MAX_POINTS_PER_FRAME = 5000  # dense clouds are subsampled to this (fixed seed)
IRLS_TOL = 1e-9
IRLS_MAX_ITERS = 100


@dataclass(frozen=True)
class HuberParams:
    delta: float  # threshold, world units

    def __post_init__(self):
        if not (self.delta > 0):
            raise ValueError("Huber delta must be positive")


@dataclass
class AffineDepthFit:
    a: float
    b: float
    inlier_fraction: float
    residual_rms: float
    accepted: bool = True
    n_used: int = 0


def huber(residual, delta: float):
    """0.5*g^2 inside |g| <= delta, delta*(|g| - delta/2) outside; C1 everywhere."""
    if delta <= 0:
        raise ValueError("Huber delta must be positive")
    g = np.asarray(residual, dtype=np.float64)
    a = np.abs(g)
    quad = 0.5 * g * g
    lin = delta * (a - 0.5 * delta)
    out = np.where(a <= delta, quad, lin)
    return float(out) if np.isscalar(residual) else out


def huber_grad(residual, delta: float):
    """d huber / d residual (kink only in the second derivative)."""
    g = np.asarray(residual, dtype=np.float64)
    out = np.where(np.abs(g) <= delta, g, delta * np.sign(g))
    return float(out) if np.isscalar(residual) else out


def _huber_weights(residual, delta: float):
    # IRLS weight rho'(g)/g; 1 on the quadratic branch, delta/|g| outside.
    a = np.abs(residual)
    w = np.ones_like(a)
    outer = a > delta
    w[outer] = delta / a[outer]
    return w


def _weighted_affine(mono, z, w):
    # argmin sum w*(z - (a*mono + b))^2, closed form normal equations
    sw = w.sum()
    sm = (w * mono).sum()
    sz = (w * z).sum()
    smm = (w * mono * mono).sum()
    smz = (w * mono * z).sum()
    det = sw * smm - sm * sm
    if abs(det) < 1e-12 * max(1.0, smm * sw):
        raise DegenerateInputError("all mono depths (nearly) equal; scale unidentifiable")
    a = (sw * smz - sm * sz) / det
    b = (smm * sz - sm * smz) / det
    return a, b


def huber_objective(mono, z, a, b, delta):
    return float(huber(z - (a * mono + b), delta).sum())


def align_depth(mono: DepthRaster, points, camera: CameraModel, delta1: float,
                seed: int = 0) -> AffineDepthFit:
    """Fit (a, b) minimizing sum_p Huber(p_z - (a*mono(pi(p)) + b); delta1).

    Points projecting outside the image or onto any invalid mono pixel are
    dropped (bilinear sampling).  Raises DegenerateInputError when fewer than
    MIN_CORRESPONDENCES usable correspondences remain or the fit is
    unidentifiable; a non-positive recovered scale is reported as degenerate
    too.  Fits with inlier fraction <= 0.5 come back with accepted=False so
    downstream positioning can skip the frame's depth term.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (N,3)")
    if pts.shape[0] > MAX_POINTS_PER_FRAME:
        rng = np.random.default_rng(seed)
        keep = rng.choice(pts.shape[0], size=MAX_POINTS_PER_FRAME, replace=False)
        pts = pts[np.sort(keep)]

    uv, z, behind = project_point(camera, pts)
    m, _, ok = sample_bilinear(mono, uv)
    use = ok & ~behind
    m = m[use]
    z = z[use]
    if m.size < MIN_CORRESPONDENCES:
        raise DegenerateInputError(
            f"only {m.size} usable correspondences (need {MIN_CORRESPONDENCES})")

    a, b = _weighted_affine(m, z, np.ones_like(m))  # L2 init
    for _ in range(IRLS_MAX_ITERS):
        w = _huber_weights(z - (a * m + b), delta1)
        a_new, b_new = _weighted_affine(m, z, w)
        delta_step = abs(a_new - a) + abs(b_new - b)
        a, b = a_new, b_new
        if delta_step < IRLS_TOL:
            break

    residual = z - (a * m + b)
    inlier_fraction = float((np.abs(residual) <= delta1).mean())
    rms = float(np.sqrt(np.mean(residual ** 2)))
    if a <= 0:
        raise DegenerateInputError(f"degenerate fit: non-positive scale a={a:.3g}")
    accepted = inlier_fraction > 0.5
    return AffineDepthFit(a=float(a), b=float(b), inlier_fraction=inlier_fraction,
                          residual_rms=rms, accepted=accepted, n_used=int(m.size))


def apply_fit(mono: DepthRaster, fit: AffineDepthFit) -> DepthRaster:
    """D_aligned = a * D_mono + b, preserving the validity mask.

    Pixels the affine map sends to non-positive depth are invalidated so the
    raster keeps its valid-entries-positive invariant.
    """
    values = fit.a * mono.values + fit.b
    validity = mono.validity & np.isfinite(values) & (values > 0)
    values = np.where(validity, values, np.nan)
    return DepthRaster(values=values, validity=validity)
