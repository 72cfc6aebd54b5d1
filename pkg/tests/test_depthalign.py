import numpy as np
import pytest

from stagekit.core import (CameraModel, DegenerateInputError, DepthRaster,
                           project_point, sample_bilinear, unproject_point)
from stagekit.depthalign import (align_depth, apply_fit, huber, huber_grad,
                                 huber_objective)


def flat_camera(w=40, h=40, fx=50.0):
    return CameraModel(fx=fx, fy=fx, cx=w / 2, cy=h / 2, rotation=np.eye(3),
                       translation=np.zeros(3), width=w, height=h)


def make_case(a=2.0, b=0.5, w=40, h=40, seed=0):
    """Points back-projected from pixel centers of a smooth depth field, mono
    warped by the inverse affine so align_depth should recover (a, b)."""
    rng = np.random.default_rng(seed)
    cam = flat_camera(w, h)
    gc, gr = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    depth = 3.0 + 0.8 * np.sin(gc / 7.0) + 0.5 * np.cos(gr / 5.0)
    rs, cs = np.nonzero(np.ones((h, w), bool))
    keep = rng.random(rs.size) < 0.5
    rs, cs = rs[keep], cs[keep]
    uv = np.stack([cs, rs], axis=-1).astype(float)
    pts = unproject_point(cam, uv, depth[rs, cs])
    mono = DepthRaster.from_values((depth - b) / a)
    return cam, mono, pts, depth


class TestHuber:
    def test_zero(self):
        assert huber(0.0, 1.0) == 0.0

    def test_branch_boundary_continuity(self):
        delta = 0.7
        assert huber(delta, delta) == pytest.approx(0.5 * delta ** 2, abs=1e-15)
        assert huber(delta + 1e-12, delta) == pytest.approx(0.5 * delta ** 2, abs=1e-9)

    def test_linear_branch_hand_value(self):
        assert huber(3.0, 1.0) == pytest.approx(2.5)

    def test_grad_matches_branches(self):
        assert huber_grad(0.3, 1.0) == pytest.approx(0.3)
        assert huber_grad(-4.0, 1.0) == pytest.approx(-1.0)

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            huber(1.0, 0.0)


class TestAlignDepth:
    def test_identity_map(self):
        cam, mono, pts, depth = make_case(a=1.0, b=0.0)
        # mono equals the true projected depths: expect exactly (1, 0)
        fit = align_depth(mono, pts, cam, delta1=0.05)
        assert fit.a == pytest.approx(1.0, abs=1e-9)
        assert fit.b == pytest.approx(0.0, abs=1e-9)
        assert fit.residual_rms == pytest.approx(0.0, abs=1e-9)
        assert fit.inlier_fraction == 1.0

    def test_exact_recovery(self):
        cam, mono, pts, _ = make_case(a=2.0, b=0.5)
        fit = align_depth(mono, pts, cam, delta1=0.05)
        assert fit.a == pytest.approx(2.0, abs=1e-6)
        assert fit.b == pytest.approx(0.5, abs=1e-6)

    def test_outliers_vs_grid_oracle(self):
        cam, mono, pts, depth = make_case(a=2.0, b=0.5, seed=3)
        rng = np.random.default_rng(4)
        pts = pts.copy()
        n_out = int(0.1 * len(pts))
        pick = rng.choice(len(pts), n_out, replace=False)
        # gross depth errors along the ray: camera at origin, so scale the point
        scale = (np.linalg.norm(pts[pick], axis=1) + 5.0) / np.linalg.norm(pts[pick], axis=1)
        pts[pick] *= scale[:, None]
        delta1 = 0.05
        fit = align_depth(mono, pts, cam, delta1)

        uv, z, behind = project_point(cam, pts)
        m, _, ok = sample_bilinear(mono, uv)
        m, z = m[ok & ~behind], z[ok & ~behind]
        grid_best, best_val = None, np.inf
        for a in np.linspace(1.9, 2.1, 41):
            for b in np.linspace(0.4, 0.6, 41):
                v = huber_objective(m, z, a, b, delta1)
                if v < best_val:
                    grid_best, best_val = (a, b), v
        assert abs(fit.a - grid_best[0]) < 0.005  # within one grid cell
        assert abs(fit.b - grid_best[1]) < 0.005
        assert huber_objective(m, z, fit.a, fit.b, delta1) <= best_val + 1e-9

    def test_irls_never_worse_than_l2_init(self):
        from stagekit.depthalign import _weighted_affine
        cam, mono, pts, _ = make_case(a=1.5, b=0.2, seed=5)
        rng = np.random.default_rng(6)
        pts = pts.copy()
        pick = rng.choice(len(pts), len(pts) // 5, replace=False)
        pts[pick] *= 1.8  # heavy corruption
        delta1 = 0.05
        uv, z, behind = project_point(cam, pts)
        m, _, ok = sample_bilinear(mono, uv)
        m, z = m[ok & ~behind], z[ok & ~behind]
        a0, b0 = _weighted_affine(m, z, np.ones_like(m))
        fit = align_depth(mono, pts, cam, delta1)
        assert huber_objective(m, z, fit.a, fit.b, delta1) \
            <= huber_objective(m, z, a0, b0, delta1) + 1e-9

    def test_equivariance_under_depth_scaling(self):
        cam, mono, pts, _ = make_case(a=2.0, b=0.5, seed=7)
        k = 3.0
        fit1 = align_depth(mono, pts, cam, delta1=0.05)
        # identity extrinsic: scaling points scales depths, keeps pixels
        fit2 = align_depth(mono, k * pts, cam, delta1=k * 0.05)
        assert fit2.a == pytest.approx(k * fit1.a, rel=1e-6)
        assert fit2.b == pytest.approx(k * fit1.b, rel=1e-6)

    def test_too_few_correspondences(self):
        cam, mono, pts, _ = make_case()
        with pytest.raises(DegenerateInputError):
            align_depth(mono, pts[:5], cam, delta1=0.05)

    def test_constant_mono_degenerate(self):
        cam = flat_camera()
        mono = DepthRaster.from_values(np.full((40, 40), 2.0))
        rng = np.random.default_rng(8)
        uv = rng.uniform(2, 38, size=(50, 2))
        pts = unproject_point(cam, uv, rng.uniform(2, 4, 50))
        with pytest.raises(DegenerateInputError):
            align_depth(mono, pts, cam, delta1=0.05)

    def test_rejected_fit_flagged(self):
        # half the points grossly off: inlier fraction <= 0.5 -> not accepted
        cam, mono, pts, _ = make_case(a=2.0, b=0.5, seed=9)
        pts = pts.copy()
        pts[::2] *= 2.5
        fit = align_depth(mono, pts, cam, delta1=0.001)
        assert fit.inlier_fraction <= 0.55
        if fit.inlier_fraction <= 0.5:
            assert not fit.accepted

    def test_subsampling_cap(self):
        cam, mono, pts, _ = make_case(seed=10, w=90, h=90)
        big = np.concatenate([pts] * 4)
        fit = align_depth(mono, big, cam, delta1=0.05)
        assert fit.n_used <= 5000

    def test_gradient_of_objective(self):
        # alignment objective gradient in (a, b) against central differences
        from stagekit.optim import check_gradient
        rng = np.random.default_rng(11)
        m = rng.uniform(1.0, 4.0, 60)
        z = 2.0 * m + 0.5 + rng.normal(0, 0.3, 60)
        delta1 = 0.2

        def loss(x):
            r = z - (x[0] * m + x[1])
            val = float(huber(r, delta1).sum())
            grad = np.array([-(huber_grad(r, delta1) * m).sum(),
                             -huber_grad(r, delta1).sum()])
            return val, grad

        for _ in range(20):
            x0 = np.array([2.0, 0.5]) + rng.normal(0, 0.2, 2)
            r = z - (x0[0] * m + x0[1])
            if np.any(np.abs(np.abs(r) - delta1) < 1e-3):
                continue  # kink-adjacent sample
            assert check_gradient(loss, x0, h=1e-6) < 1e-6


class TestApplyFit:
    def test_validity_preserved_and_positive(self):
        vals = np.array([[1.0, np.nan], [0.1, 3.0]])
        mono = DepthRaster(values=vals, validity=np.isfinite(vals))
        from stagekit.depthalign import AffineDepthFit
        fit = AffineDepthFit(a=2.0, b=-0.5, inlier_fraction=1.0, residual_rms=0.0)
        out = apply_fit(mono, fit)
        assert out.validity[0, 0] and out.validity[1, 1]
        assert not out.validity[0, 1]
        assert not out.validity[1, 0]  # 2*0.1-0.5 < 0 invalidated
        assert out.values[0, 0] == pytest.approx(1.5)
