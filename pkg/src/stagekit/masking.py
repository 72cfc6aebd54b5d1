"""Depth-comparison foreground masks and the masked photometric actor loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .compositor import luminance, ssim_masked_with_grad
from .core import DepthRaster

log = logging.getLogger(__name__)

LAMBDA_DSSIM = 0.2  # vanilla splat-training photometric mix


@dataclass
class ForegroundMask:
    values: np.ndarray  # (H,W) bool, 1 = some actor in front of the stage

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def foreground_mask(d_stage: DepthRaster, actor_depths) -> ForegroundMask:
    """Pixels where the nearest valid actor depth beats the stage depth.

    Strict inequality: an actor exactly on the stage surface stays
    background, avoiding z-fighting supervision.  An actor over invalid
    stage depth counts as foreground; pixels with no valid actor depth are
    background regardless.
    """
    for ad in actor_depths:
        if ad.values.shape != d_stage.values.shape:
            raise ValueError("actor/stage raster sizes differ")
    h, w = d_stage.values.shape
    if not actor_depths:
        return ForegroundMask(values=np.zeros((h, w), dtype=bool))
    stacked = np.stack([np.where(ad.validity, ad.values, np.inf) for ad in actor_depths])
    nearest = stacked.min(axis=0)
    any_actor = np.isfinite(nearest)
    stage_vals = np.where(d_stage.validity, d_stage.values, np.inf)
    return ForegroundMask(values=any_actor & (nearest < stage_vals))


def masked_actor_loss(render_actor, input_frame, mask) -> float:
    return masked_actor_loss_with_grad(render_actor, input_frame, mask)[0]


def masked_actor_loss_with_grad(render_actor, input_frame, mask,
                                lambda_dssim: float = LAMBDA_DSSIM):
    """(1-lambda)*L1 + lambda*D-SSIM on masked pixels, with the gradient
    w.r.t. the rendered image.  Pixels outside the mask cannot affect the
    value (images are mask-multiplied before any filtering)."""
    mask_arr = mask.values if isinstance(mask, ForegroundMask) else np.asarray(mask, dtype=bool)
    render = np.asarray(render_actor, dtype=np.float64)
    target = np.asarray(input_frame, dtype=np.float64)
    if render.shape != target.shape or render.shape[:2] != mask_arr.shape:
        raise ValueError("image/mask shapes differ")
    n = int(mask_arr.sum())
    grad = np.zeros_like(render)
    if n == 0:
        log.warning("masked_actor_loss: empty mask, returning 0")
        return 0.0, grad

    diff = np.where(mask_arr[:, :, None], render - target, 0.0)
    l1 = float(np.abs(diff[mask_arr]).mean())
    grad += np.sign(diff) / (n * render.shape[2])

    ssim_val, ssim_grad_lum = ssim_masked_with_grad(
        luminance(np.where(mask_arr[:, :, None], render, 0.0)),
        luminance(np.where(mask_arr[:, :, None], target, 0.0)), mask_arr)
    dssim = (1.0 - ssim_val) / 2.0
    # through D-SSIM = (1-S)/2, then luminance = channel mean
    grad_dssim = np.where(mask_arr[:, :, None],
                          (-0.5 * ssim_grad_lum / render.shape[2])[:, :, None], 0.0)

    value = (1.0 - lambda_dssim) * l1 + lambda_dssim * dssim
    grad = (1.0 - lambda_dssim) * grad + lambda_dssim * grad_dssim
    return value, grad


def masked_l1(render_actor, input_frame, mask) -> float:
    """Plain masked mean absolute error (reporting metric)."""
    mask_arr = mask.values if isinstance(mask, ForegroundMask) else np.asarray(mask, dtype=bool)
    if not mask_arr.any():
        return 0.0
    diff = np.asarray(render_actor, dtype=np.float64) - np.asarray(input_frame, dtype=np.float64)
    return float(np.abs(diff[mask_arr]).mean())


# ---------------------------------------------------------------------------
# PGM export for inspection
# ---------------------------------------------------------------------------

def write_pgm(path, mask) -> None:
    """8-bit binary PGM (P5); foreground white."""
    values = mask.values if isinstance(mask, ForegroundMask) else np.asarray(mask, dtype=bool)
    data = np.where(values, 255, 0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w)
    return data.reshape(h, w) >= 128
