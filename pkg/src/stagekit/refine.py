"""Residual appearance refinement: an MLP maps encoded splat position and
clip time to color/opacity residuals added onto actor splats.

Geometry never moves; only colors and opacities change, clamped to [0,1].
The trunk is eight 256-wide fully connected ReLU layers with the encoded
input concatenated onto the fourth layer's output; two tanh heads emit the
residuals, zero-initialized so training starts from the identity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .compositor import FrameCompositePlan
from .core import SplatSet
from .masking import masked_actor_loss_with_grad, masked_l1
from .optim import OptimizerState, exponential_to_one_percent, step

log = logging.getLogger(__name__)

TRUNK_LAYERS = 8
TRUNK_WIDTH = 256
SKIP_AFTER = 4  # input re-enters after this many trunk layers


@dataclass(frozen=True)
class EncodingSpec:
    l_pos: int = 10  # frequency bands for gamma(mu), per coordinate
    l_time: int = 6  # frequency bands for gamma(t)

    @property
    def input_dim(self) -> int:
        return 3 * 2 * self.l_pos + 2 * self.l_time


def _encode_scalar(x, n_bands: int) -> np.ndarray:
    """gamma(x) = (sin(2^0 pi x), cos(2^0 pi x), ..., sin/cos(2^(L-1) pi x))."""
    x = np.asarray(x, dtype=np.float64)
    freqs = (2.0 ** np.arange(n_bands)) * np.pi
    angles = x[..., None] * freqs
    out = np.empty(x.shape + (2 * n_bands,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def encode(mu_normalized, t: float, spec: EncodingSpec) -> np.ndarray:
    """Concatenated positional encoding of (K,3) normalized centers and time."""
    mu = np.atleast_2d(np.asarray(mu_normalized, dtype=np.float64))
    parts = [_encode_scalar(mu[:, c], spec.l_pos) for c in range(3)]
    time_enc = _encode_scalar(np.full(mu.shape[0], float(t)), spec.l_time)
    return np.concatenate(parts + [time_enc], axis=1)


def normalize_to_box(points, lo, hi) -> np.ndarray:
    """Map a bounding box to [-1,1]^3 (degenerate extents map to 0)."""
    points = np.asarray(points, dtype=np.float64)
    extent = np.maximum(hi - lo, 1e-9)
    return np.clip(2.0 * (points - lo) / extent - 1.0, -1.0, 1.0)


class FittingNetwork:
    """Trunk + two tanh heads over flat numpy weights."""

    def __init__(self, input_dim: int, width: int = TRUNK_WIDTH, seed: int = 0,
                 head_scale: float = 0.0):
        self.input_dim = input_dim
        self.width = width
        rng = np.random.default_rng(seed)
        self.weights = []  # list of (W, b) in forward order: 8 trunk, color, opacity
        in_dim = input_dim
        for i in range(TRUNK_LAYERS):
            if i == SKIP_AFTER:
                in_dim += input_dim
            w = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, width))
            self.weights.append((w, np.zeros(width)))
            in_dim = width
        for out_dim in (3, 1):  # color head, opacity head
            if head_scale > 0:
                w = rng.normal(0.0, head_scale, size=(width, out_dim))
            else:
                w = np.zeros((width, out_dim))
            self.weights.append((w, np.zeros(out_dim)))

    # -- flat parameter packing (Adam runs on one vector) --

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.weights])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        packed = []
        for w, b in self.weights:
            nw, nb = w.size, b.size
            packed.append((flat[pos:pos + nw].reshape(w.shape).copy(),
                           flat[pos + nw:pos + nw + nb].copy()))
            pos += nw + nb
        if pos != flat.size:
            raise ValueError("flat weight vector has wrong length")
        self.weights = packed

    # -- forward / backward --

    def forward(self, x, want_cache: bool = False):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = []
        h = x
        for i in range(TRUNK_LAYERS):
            if i == SKIP_AFTER:
                h = np.concatenate([h, x], axis=1)
            w, b = self.weights[i]
            pre = h @ w + b
            cache.append((h, pre))
            h = np.maximum(pre, 0.0)
        wc, bc = self.weights[TRUNK_LAYERS]
        wo, bo = self.weights[TRUNK_LAYERS + 1]
        color_res = np.tanh(h @ wc + bc)
        opac_res = np.tanh(h @ wo + bo)[:, 0]
        if want_cache:
            return color_res, opac_res, (x, cache, h, color_res, opac_res)
        return color_res, opac_res

    def backward(self, fwd_cache, d_color_res, d_opac_res):
        """Gradients w.r.t. all weights, flat-packed like get_flat()."""
        x, cache, feat, color_res, opac_res = fwd_cache
        d_color_res = np.asarray(d_color_res, dtype=np.float64)
        d_opac_res = np.asarray(d_opac_res, dtype=np.float64)
        grads = [None] * len(self.weights)

        d_pre_c = d_color_res * (1.0 - color_res ** 2)
        d_pre_o = (d_opac_res * (1.0 - opac_res ** 2))[:, None]
        wc, _ = self.weights[TRUNK_LAYERS]
        wo, _ = self.weights[TRUNK_LAYERS + 1]
        grads[TRUNK_LAYERS] = (feat.T @ d_pre_c, d_pre_c.sum(axis=0))
        grads[TRUNK_LAYERS + 1] = (feat.T @ d_pre_o, d_pre_o.sum(axis=0))
        d_h = d_pre_c @ wc.T + d_pre_o @ wo.T

        for i in range(TRUNK_LAYERS - 1, -1, -1):
            h_in, pre = cache[i]
            d_pre = d_h * (pre > 0)
            w, _ = self.weights[i]
            grads[i] = (h_in.T @ d_pre, d_pre.sum(axis=0))
            d_h = d_pre @ w.T
            if i == SKIP_AFTER:  # drop the concatenated input slice
                d_h = d_h[:, :self.width]
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def residuals(net: FittingNetwork, mu, t: float, enc: EncodingSpec,
              lo=None, hi=None):
    """Color/opacity residuals for raw splat centers at clip time t in [0,1].

    Centers are normalized to their bounding box before encoding; pass lo/hi
    to pin the box (training does, so it stays frozen)."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    if lo is None:
        lo, hi = mu.min(axis=0), mu.max(axis=0)
    x = encode(normalize_to_box(mu, lo, hi), t, enc)
    return net.forward(x)


def apply_residuals(actors, net: FittingNetwork, t: float,
                    enc: EncodingSpec = EncodingSpec()):
    """New actor splat sets with refined colors/opacities at time t.

    Positions, rotations and scales are untouched; color and opacity are
    clamped back into [0,1] after the residual add."""
    out = []
    for actor in actors:
        centers = actor.centers()
        lo, hi = centers.min(axis=0), centers.max(axis=0)
        d_color, d_opac = residuals(net, centers, t, enc, lo, hi)
        splats = []
        for i, sp in enumerate(actor.splats):
            splats.append(replace(
                sp,
                color=np.clip(sp.color + d_color[i], 0.0, 1.0),
                opacity=float(np.clip(sp.opacity + d_opac[i], 0.0, 1.0)),
            ))
        out.append(SplatSet(splats=splats, tag=actor.tag))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class RefinementProblem:
    """Precomputed geometry for fitting residuals to target frames.

    Actor sets are concatenated; each actor's centers are normalized by its
    own bounding box.  Compositing plans are frozen per frame since geometry
    never moves."""

    def __init__(self, actors, cameras, times, enc: EncodingSpec,
                 truncation_sigma: float | None = 3.0):
        self.enc = enc
        centers, scales, colors, opac, norm = [], [], [], [], []
        for actor in actors:
            c, s, col, o = actor.arrays()
            lo, hi = c.min(axis=0), c.max(axis=0)
            norm.append(normalize_to_box(c, lo, hi))
            centers.append(c)
            scales.append(s)
            colors.append(col)
            opac.append(o)
        self.centers = np.concatenate(centers)
        self.scales = np.concatenate(scales)
        self.base_colors = np.concatenate(colors)
        self.base_opacities = np.concatenate(opac)
        self.normalized = np.concatenate(norm)
        self.times = list(times)
        self.encodings = [encode(self.normalized, t, enc) for t in self.times]
        self.plans = [FrameCompositePlan(self.centers, self.scales, cam,
                                         truncation_sigma) for cam in cameras]

    def render_with_net(self, net: FittingNetwork | None, frame: int):
        if net is None:
            colors, opac = self.base_colors, self.base_opacities
        else:
            d_color, d_opac = net.forward(self.encodings[frame])
            colors = np.clip(self.base_colors + d_color, 0.0, 1.0)
            opac = np.clip(self.base_opacities + d_opac, 0.0, 1.0)
        return self.plans[frame].forward(colors, opac)


def refinement_loss_and_grad(problem: RefinementProblem, net: FittingNetwork,
                             frame: int, target, mask):
    """Masked photometric loss of one frame and its gradient w.r.t. the flat
    network weights (the refinement training objective)."""
    d_color, d_opac, net_cache = net.forward(problem.encodings[frame], want_cache=True)
    raw_colors = problem.base_colors + d_color
    raw_opac = problem.base_opacities + d_opac
    colors = np.clip(raw_colors, 0.0, 1.0)
    opac = np.clip(raw_opac, 0.0, 1.0)

    plan = problem.plans[frame]
    rendered, _, comp_cache = plan.forward(colors, opac, want_cache=True)
    value, d_image = masked_actor_loss_with_grad(rendered, target, mask)
    g_colors, g_opac = plan.backward(colors, opac, comp_cache, d_image)
    g_colors = np.where((raw_colors > 0.0) & (raw_colors < 1.0), g_colors, 0.0)
    g_opac = np.where((raw_opac > 0.0) & (raw_opac < 1.0), g_opac, 0.0)
    return value, net.backward(net_cache, g_colors, g_opac)


def train_refinement(actors, targets, masks, cameras, iters: int = 2000,
                     times=None, enc: EncodingSpec = EncodingSpec(),
                     width: int = TRUNK_WIDTH, lr: float = 3e-3, seed: int = 0,
                     stop_at_l1_fraction: float | None = None):
    """Fit the residual network to target frames over frozen actor splats.

    Returns (net, report) where report carries the zero-residual baseline
    masked L1, the final masked L1, and the per-iteration loss history.
    Refuses single-frame input: the time signal is unidentifiable."""
    n_frames = len(targets)
    if times is None:
        times = [0.0] if n_frames == 1 else [f / (n_frames - 1) for f in range(n_frames)]
    if len(set(float(t) for t in times)) < 2:
        raise ValueError("train_refinement needs frames at >= 2 distinct times")

    problem = RefinementProblem(actors, cameras, times, enc)
    net = FittingNetwork(enc.input_dim, width=width, seed=seed)
    mask_arrays = [m.values if hasattr(m, "values") else np.asarray(m, dtype=bool)
                   for m in masks]

    def mean_l1(model):
        vals = [masked_l1(problem.render_with_net(model, f), targets[f], mask_arrays[f])
                for f in range(n_frames)]
        return float(np.mean(vals))

    baseline_l1 = mean_l1(None)
    schedule = exponential_to_one_percent(lr, iters)
    adam = OptimizerState.for_params(net.get_flat())
    history = []
    ran = 0
    for it in range(iters):
        f = it % n_frames
        value, grad = refinement_loss_and_grad(problem, net, f, targets[f],
                                               mask_arrays[f])
        net.set_flat(step(adam, net.get_flat(), grad, schedule.lr(it)))
        history.append(value)
        ran = it + 1
        if stop_at_l1_fraction is not None and (it + 1) % 50 == 0 and baseline_l1 > 0:
            if mean_l1(net) <= stop_at_l1_fraction * baseline_l1:
                log.info("refinement early stop at iteration %d", it + 1)
                break

    final_l1 = mean_l1(net)
    report = {"baseline_l1": baseline_l1, "final_l1": final_l1,
              "iterations": ran, "history": history}
    return net, report


# ---------------------------------------------------------------------------
# weight serialization: flat f32le blob + JSON sidecar with layer shapes
# ---------------------------------------------------------------------------

def save_network(net: FittingNetwork, blob_path, sidecar_path=None) -> None:
    sidecar_path = sidecar_path or str(blob_path) + ".json"
    flat = net.get_flat().astype("<f4")
    with open(blob_path, "wb") as f:
        f.write(flat.tobytes())
    layers = []
    for i, (w, b) in enumerate(net.weights):
        layers.append({"index": i, "w_shape": list(w.shape), "b_shape": list(b.shape)})
    sidecar = {"input_dim": net.input_dim, "width": net.width, "layers": layers}
    with open(sidecar_path, "w") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)


def load_network(blob_path, sidecar_path=None) -> FittingNetwork:
    sidecar_path = sidecar_path or str(blob_path) + ".json"
    with open(sidecar_path) as f:
        sidecar = json.load(f)
    net = FittingNetwork(sidecar["input_dim"], width=sidecar["width"])
    with open(blob_path, "rb") as f:
        flat = np.frombuffer(f.read(), dtype="<f4").astype(np.float64)
    net.set_flat(flat)
    return net
