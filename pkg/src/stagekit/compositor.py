"""Front-to-back alpha compositing of splat depth and color, and the stage
reconstruction losses (masked color/D-SSIM, log-L1 depth guidance, TV).

Splats use an isotropic screen footprint sigma_px = mean(scale) * fx / depth;
evaluation is truncated at 3 sigma unless truncation is disabled, which is
how the brute-force reference compositor is matched in tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import CameraModel, DepthRaster, SplatSet, project_point

log = logging.getLogger(__name__)

MIN_VALID_ALPHA = 0.01  # pixels below this accumulated alpha have no usable depth
ALPHA_CEIL = 1.0 - 1e-6  # differentiable path only; keeps 1/(1-alpha) finite


@dataclass
class RenderedFrame:
    depth: DepthRaster
    color: np.ndarray  # (H,W,3) in [0,1], black where nothing composited
    accumulated_alpha: np.ndarray  # (H,W) in [0,1]


@dataclass(frozen=True)
class StageLossWeights:
    lambda_dssim: float = 0.2
    lambda_depth: float = 0.2
    lambda_smooth: float = 0.5

    def __post_init__(self):
        if min(self.lambda_dssim, self.lambda_depth, self.lambda_smooth) < 0:
            raise ValueError("stage loss weights must be non-negative")


def _gather_splats(splats):
    """Accepts a SplatSet or a list of them (composite scene)."""
    sets = [splats] if isinstance(splats, SplatSet) else list(splats)
    parts = [s.arrays() for s in sets if len(s) > 0]
    if not parts:
        raise ValueError("render needs at least one splat")
    centers = np.concatenate([p[0] for p in parts])
    scales = np.concatenate([p[1] for p in parts])
    colors = np.concatenate([p[2] for p in parts])
    opacities = np.concatenate([p[3] for p in parts])
    return centers, scales, colors, opacities


def _splat_screen_geometry(centers, scales, camera: CameraModel):
    uv, z, behind = project_point(camera, centers)
    keep = ~behind
    sigma_px = np.zeros_like(z)
    sigma_px[keep] = scales[keep].mean(axis=1) * camera.fx / z[keep]
    return uv, z, sigma_px, keep


def render(splats, camera: CameraModel, truncation_sigma: float | None = 3.0) -> RenderedFrame:
    """Composite depth and color front-to-back (depth-ascending splat order).

    truncation_sigma=None disables footprint truncation (reference behaviour,
    quadratic cost).  Empty pixels get invalid depth, black color, alpha 0.
    """
    centers, scales, colors, opacities = _gather_splats(splats)
    uv, z, sigma_px, keep = _splat_screen_geometry(centers, scales, camera)

    h, w = camera.height, camera.width
    transmittance = np.ones((h, w))
    depth_acc = np.zeros((h, w))
    color_acc = np.zeros((h, w, 3))

    order = np.argsort(z, kind="stable")
    cols = np.arange(w)
    rows = np.arange(h)
    for k in order:
        if not keep[k]:
            continue
        sig = sigma_px[k]
        if sig <= 0:
            continue
        if truncation_sigma is None:
            c0, c1, r0, r1 = 0, w, 0, h
        else:
            rad = truncation_sigma * sig
            c0 = max(int(np.ceil(uv[k, 0] - rad)), 0)
            c1 = min(int(np.floor(uv[k, 0] + rad)) + 1, w)
            r0 = max(int(np.ceil(uv[k, 1] - rad)), 0)
            r1 = min(int(np.floor(uv[k, 1] + rad)) + 1, h)
            if c0 >= c1 or r0 >= r1:
                continue
        du = cols[c0:c1] - uv[k, 0]
        dv = rows[r0:r1] - uv[k, 1]
        r2 = dv[:, None] ** 2 + du[None, :] ** 2
        g = np.exp(-0.5 * r2 / (sig * sig))
        if truncation_sigma is not None:
            g = np.where(r2 <= (truncation_sigma * sig) ** 2, g, 0.0)
        alpha = opacities[k] * g
        weight = alpha * transmittance[r0:r1, c0:c1]
        depth_acc[r0:r1, c0:c1] += z[k] * weight
        color_acc[r0:r1, c0:c1] += colors[k][None, None, :] * weight[:, :, None]
        transmittance[r0:r1, c0:c1] *= 1.0 - alpha

    acc_alpha = 1.0 - transmittance
    valid = acc_alpha >= MIN_VALID_ALPHA
    depth = DepthRaster(values=np.where(valid, depth_acc, np.nan), validity=valid)
    return RenderedFrame(depth=depth, color=color_acc, accumulated_alpha=acc_alpha)


# ---------------------------------------------------------------------------
# stage losses
# ---------------------------------------------------------------------------

def loss_depth_logl1(render: DepthRaster, target: DepthRaster, mask=None):
    """Mean log(1 + |render - target|) over mask AND both validity masks."""
    value, _ = loss_depth_logl1_with_grad(render, target, mask)
    return value


def loss_depth_logl1_with_grad(render: DepthRaster, target: DepthRaster, mask=None):
    if render.values.shape != target.values.shape:
        raise ValueError("raster shapes differ")
    sel = render.validity & target.validity
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    n = int(sel.sum())
    grad = np.zeros_like(render.values)
    if n == 0:
        log.warning("loss_depth_logl1: empty evaluation set, returning 0")
        return 0.0, grad
    diff = np.where(sel, render.values - target.values, 0.0)
    value = float(np.log1p(np.abs(diff[sel])).mean())
    grad[sel] = np.sign(diff[sel]) / (1.0 + np.abs(diff[sel])) / n
    return value, grad


def loss_tv(render: DepthRaster):
    """Mean L1 forward difference of depth; differences touching invalid pixels skipped."""
    value, _ = loss_tv_with_grad(render)
    return value


def loss_tv_with_grad(render: DepthRaster):
    d = render.values
    valid = render.validity
    h, w = d.shape
    grad = np.zeros_like(d)

    du_ok = valid[:, :-1] & valid[:, 1:]
    dv_ok = valid[:-1, :] & valid[1:, :]
    du = np.where(du_ok, d[:, 1:] - d[:, :-1], 0.0)
    dv = np.where(dv_ok, d[1:, :] - d[:-1, :], 0.0)

    contributes = np.zeros((h, w), dtype=bool)
    contributes[:, :-1] |= du_ok
    contributes[:-1, :] |= dv_ok
    n = int(contributes.sum())
    if n == 0:
        return 0.0, grad

    total = np.abs(du[du_ok]).sum() + np.abs(dv[dv_ok]).sum()
    value = float(total / n)

    su = np.where(du_ok, np.sign(du), 0.0) / n
    sv = np.where(dv_ok, np.sign(dv), 0.0) / n
    grad[:, 1:] += su
    grad[:, :-1] -= su
    grad[1:, :] += sv
    grad[:-1, :] -= sv
    return value, grad


# ---------------------------------------------------------------------------
# SSIM (11x11 Gaussian window, sigma=1.5, K1=0.01, K2=0.03, unit range)
# ---------------------------------------------------------------------------

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _gaussian_kernel(radius: int = 5, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


_SSIM_KERNEL = _gaussian_kernel()


def _filter_sep(img: np.ndarray, k: np.ndarray = _SSIM_KERNEL) -> np.ndarray:
    """Separable 'same' filtering with zero padding (kernel is symmetric, so
    this is its own adjoint)."""
    r = (len(k) - 1) // 2
    pad = np.pad(img, ((r, r), (0, 0)))
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        out += kv * pad[i:i + img.shape[0], :]
    pad = np.pad(out, ((0, 0), (r, r)))
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        out += kv * pad[:, i:i + img.shape[1]]
    return out


def luminance(image: np.ndarray) -> np.ndarray:
    """Channel mean of an (H,W,3) image (already-2d images pass through)."""
    img = np.asarray(image, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def ssim_masked(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    value, _ = ssim_masked_with_grad(x, y, mask)
    return value


def ssim_masked_with_grad(x: np.ndarray, y: np.ndarray, mask: np.ndarray):
    """Mean SSIM over masked pixels of mask-multiplied single-channel images,
    plus its gradient w.r.t. x (the rendered image)."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("ssim_masked: empty mask")
    xm = np.where(mask, x, 0.0)
    ym = np.where(mask, y, 0.0)

    mu_x = _filter_sep(xm)
    mu_y = _filter_sep(ym)
    gx2 = _filter_sep(xm * xm)
    gy2 = _filter_sep(ym * ym)
    gxy = _filter_sep(xm * ym)
    var_x = gx2 - mu_x * mu_x
    var_y = gy2 - mu_y * mu_y
    cov = gxy - mu_x * mu_y

    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s_map = (a1 * a2) / (b1 * b2)
    value = float(s_map[mask].mean())

    # adjoint of the masked mean, then of each SSIM ingredient
    w_up = np.where(mask, 1.0 / n, 0.0)
    ds_da1 = a2 / (b1 * b2)
    ds_da2 = a1 / (b1 * b2)
    ds_db1 = -s_map / b1
    ds_db2 = -s_map / b2

    d_mu = w_up * (ds_da1 * 2 * mu_y + ds_db1 * 2 * mu_x
                   + ds_da2 * 2 * (-mu_y) + ds_db2 * (-2 * mu_x))
    d_gx2 = w_up * ds_db2
    d_gxy = w_up * ds_da2 * 2

    grad_xm = _filter_sep(d_mu) + 2 * xm * _filter_sep(d_gx2) + ym * _filter_sep(d_gxy)
    grad_x = np.where(mask, grad_xm, 0.0)  # xm = mask * x
    return value, grad_x


def dssim_masked(x, y, mask) -> float:
    return (1.0 - ssim_masked(x, y, mask)) / 2.0


def loss_stage(rendered: RenderedFrame, image, d_aligned: DepthRaster, m_stage,
               weights: StageLossWeights = StageLossWeights()):
    """Combined stage loss; returns (total, per-term breakdown dict)."""
    m_stage = np.asarray(m_stage, dtype=bool)
    if int(m_stage.sum()) == 0:
        raise ValueError("loss_stage: empty stage mask")
    image = np.asarray(image, dtype=np.float64)

    abs_err = np.abs(rendered.color - image).mean(axis=2)
    l_color = float(abs_err[m_stage].mean())
    l_dssim = (1.0 - ssim_masked(luminance(rendered.color), luminance(image), m_stage)) / 2.0
    l_depth = loss_depth_logl1(rendered.depth, d_aligned, m_stage)
    l_tv = loss_tv(rendered.depth)

    total = ((1.0 - weights.lambda_dssim) * l_color + weights.lambda_dssim * l_dssim
             + weights.lambda_depth * l_depth + weights.lambda_smooth * l_tv)
    breakdown = {"color": l_color, "dssim": l_dssim, "depth": l_depth, "tv": l_tv}
    return total, breakdown


# ---------------------------------------------------------------------------
# differentiable color compositing over frozen geometry (used by refinement)
# ---------------------------------------------------------------------------

class FrameCompositePlan:
    """Per-frame compositing plan with geometry (projection, footprint, depth
    order) frozen; forward/backward run over splat colors and opacities only."""

    def __init__(self, centers, scales, camera: CameraModel,
                 truncation_sigma: float | None = 3.0):
        centers = np.asarray(centers, dtype=np.float64)
        scales = np.asarray(scales, dtype=np.float64)
        uv, z, sigma_px, keep = _splat_screen_geometry(centers, scales, camera)
        h, w = camera.height, camera.width
        self.shape = (h, w)
        self.n_splats = centers.shape[0]

        order = [k for k in np.argsort(z, kind="stable") if keep[k] and sigma_px[k] > 0]
        self.order = np.asarray(order, dtype=int)
        self.windows = []  # (flat pixel indices, g values) per splat, depth order
        for k in self.order:
            sig = sigma_px[k]
            if truncation_sigma is None:
                c0, c1, r0, r1 = 0, w, 0, h
            else:
                rad = truncation_sigma * sig
                c0 = max(int(np.ceil(uv[k, 0] - rad)), 0)
                c1 = min(int(np.floor(uv[k, 0] + rad)) + 1, w)
                r0 = max(int(np.ceil(uv[k, 1] - rad)), 0)
                r1 = min(int(np.floor(uv[k, 1] + rad)) + 1, h)
            if c0 >= c1 or r0 >= r1:
                self.windows.append((np.zeros(0, dtype=int), np.zeros(0)))
                continue
            du = np.arange(c0, c1) - uv[k, 0]
            dv = np.arange(r0, r1) - uv[k, 1]
            r2 = dv[:, None] ** 2 + du[None, :] ** 2
            g = np.exp(-0.5 * r2 / (sig * sig))
            if truncation_sigma is not None:
                g = np.where(r2 <= (truncation_sigma * sig) ** 2, g, 0.0)
            rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
            self.windows.append(((rr * w + cc).ravel(), g.ravel()))

    def forward(self, colors, opacities, want_cache=False):
        """Composite color; alpha is clipped at ALPHA_CEIL so the backward
        pass stays finite."""
        h, w = self.shape
        colors = np.asarray(colors, dtype=np.float64)
        opacities = np.asarray(opacities, dtype=np.float64)
        trans = np.ones(h * w)
        color = np.zeros((h * w, 3))
        cache = [] if want_cache else None
        for j, k in enumerate(self.order):
            idx, g = self.windows[j]
            if idx.size == 0:
                if want_cache:
                    cache.append(None)
                continue
            alpha = np.minimum(opacities[k] * g, ALPHA_CEIL)
            t_here = trans[idx]
            color[idx] += colors[k][None, :] * (alpha * t_here)[:, None]
            trans[idx] = t_here * (1.0 - alpha)
            if want_cache:
                cache.append((alpha, t_here))
        out = color.reshape(h, w, 3)
        if want_cache:
            return out, (1.0 - trans).reshape(h, w), cache
        return out

    def backward(self, colors, opacities, cache, d_color):
        """Gradients of a scalar loss w.r.t. splat colors and opacities given
        d loss / d rendered color."""
        colors = np.asarray(colors, dtype=np.float64)
        opacities = np.asarray(opacities, dtype=np.float64)
        d_color = d_color.reshape(-1, 3)
        grad_c = np.zeros_like(colors)
        grad_o = np.zeros(self.n_splats)
        # per-pixel sum over later splats of (dL/dC . c) * alpha * T
        suffix = np.zeros(d_color.shape[0])
        for j in range(len(self.order) - 1, -1, -1):
            entry = cache[j]
            if entry is None:
                continue
            k = self.order[j]
            idx, g = self.windows[j]
            alpha, t_here = entry
            d_here = d_color[idx]
            weight = alpha * t_here
            grad_c[k] = d_here.T @ weight
            # dC/dalpha = c * T - (later contributions) / (1 - alpha)
            d_dot_c = d_here @ colors[k]
            d_alpha = d_dot_c * t_here - suffix[idx] / (1.0 - alpha)
            unclamped = opacities[k] * g < ALPHA_CEIL
            grad_o[k] = float((d_alpha * g * unclamped).sum())
            suffix[idx] += d_dot_c * weight
        return grad_c, grad_o


# ---------------------------------------------------------------------------
# PPM export for inspection
# ---------------------------------------------------------------------------

def write_ppm(path, color: np.ndarray) -> None:
    """8-bit binary PPM (P6) from an (H,W,3) float image in [0,1]."""
    img = np.clip(np.asarray(color, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes(order="C"))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0
