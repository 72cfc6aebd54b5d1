import numpy as np
import pytest

from stagekit.core import Splat, SplatSet, look_at_camera
from stagekit.optim import check_gradient
from stagekit.refine import (EncodingSpec, FittingNetwork, RefinementProblem,
                             apply_residuals, encode, load_network,
                             refinement_loss_and_grad, save_network,
                             train_refinement)


def small_actor(rng, n=20, center=(0, 1, 3), spread=0.25, tag="actor:0"):
    splats = [Splat(center=rng.normal(center, spread, 3), rotation=[1, 0, 0, 0],
                    scale=[0.12] * 3, color=0.25 + 0.5 * rng.random(3),
                    opacity=0.45 + 0.4 * rng.random()) for _ in range(n)]
    return SplatSet(splats=splats, tag=tag)


class TestEncoding:
    def test_input_dim_arithmetic(self):
        assert EncodingSpec(l_pos=10, l_time=6).input_dim == 72
        assert EncodingSpec(l_pos=2, l_time=3).input_dim == 18

    def test_band_layout(self):
        # gamma(x) = (sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x), ...)
        enc = encode(np.array([[0.25, 0.0, 0.0]]), 0.0, EncodingSpec(l_pos=2, l_time=1))
        np.testing.assert_allclose(enc[0, :4],
                                   [np.sin(np.pi * 0.25), np.cos(np.pi * 0.25),
                                    np.sin(2 * np.pi * 0.25), np.cos(2 * np.pi * 0.25)],
                                   atol=1e-12)
        # time channels at the tail: sin(0)=0, cos(0)=1
        np.testing.assert_allclose(enc[0, -2:], [0.0, 1.0], atol=1e-12)


class TestNetwork:
    def test_zero_init_heads_output_zero(self):
        net = FittingNetwork(input_dim=18, width=16, seed=0)
        rng = np.random.default_rng(1)
        dc, do = net.forward(rng.normal(size=(7, 18)))
        np.testing.assert_array_equal(dc, 0.0)
        np.testing.assert_array_equal(do, 0.0)

    def test_outputs_bounded_by_tanh(self):
        net = FittingNetwork(input_dim=18, width=16, seed=0, head_scale=0.5)
        rng = np.random.default_rng(2)
        dc, do = net.forward(rng.normal(size=(10000, 18)))
        assert np.all(np.abs(dc) < 1.0)
        assert np.all(np.abs(do) < 1.0)

    def test_forward_matches_reference_matrix_evaluation(self):
        enc = EncodingSpec(l_pos=2, l_time=2)
        net = FittingNetwork(enc.input_dim, width=8, seed=3, head_scale=0.1)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, enc.input_dim))

        # independent layer-by-layer evaluation
        h = x
        for i in range(8):
            if i == 4:
                h = np.concatenate([h, x], axis=1)
            w, b = net.weights[i]
            h = np.maximum(h @ w + b, 0.0)
        wc, bc = net.weights[8]
        wo, bo = net.weights[9]
        ref_dc = np.tanh(h @ wc + bc)
        ref_do = np.tanh(h @ wo + bo)[:, 0]

        dc, do = net.forward(x)
        np.testing.assert_allclose(dc, ref_dc, atol=1e-6)
        np.testing.assert_allclose(do, ref_do, atol=1e-6)

    def test_flat_round_trip(self):
        net = FittingNetwork(input_dim=12, width=8, seed=5, head_scale=0.1)
        flat = net.get_flat()
        net2 = FittingNetwork(input_dim=12, width=8, seed=99)
        net2.set_flat(flat)
        np.testing.assert_array_equal(net2.get_flat(), flat)

    def test_serialization_round_trip(self, tmp_path):
        net = FittingNetwork(input_dim=12, width=8, seed=6, head_scale=0.05)
        blob = tmp_path / "net.bin"
        save_network(net, blob)
        back = load_network(blob)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 12))
        a, b = net.forward(x)
        a2, b2 = back.forward(x)
        np.testing.assert_allclose(a2, a, atol=1e-6)
        np.testing.assert_allclose(b2, b, atol=1e-6)
        save_network(back, tmp_path / "net2.bin")
        assert blob.read_bytes() == (tmp_path / "net2.bin").read_bytes()


class TestApplyResiduals:
    def test_zero_residuals_identity(self):
        rng = np.random.default_rng(8)
        actor = small_actor(rng)
        net = FittingNetwork(EncodingSpec().input_dim, seed=0)  # zero heads
        out = apply_residuals([actor], net, 0.5)
        for a, b in zip(actor.splats, out[0].splats):
            np.testing.assert_array_equal(a.color, b.color)
            assert a.opacity == b.opacity

    def test_clamp_boundary(self):
        sp = Splat(center=[0, 0, 1], rotation=[1, 0, 0, 0], scale=[0.1] * 3,
                   color=[0.9, 0.9, 0.9], opacity=0.95)
        actor = SplatSet(splats=[sp, sp], tag="actor:0")

        class Bump:
            def forward(self, x):
                return np.full((x.shape[0], 3), 0.3), np.full(x.shape[0], 0.3)

        from stagekit import refine as refine_mod
        out = refine_mod.apply_residuals([actor], Bump(), 0.0)
        for s in out[0].splats:
            np.testing.assert_array_equal(s.color, [1.0, 1.0, 1.0])
            assert s.opacity == 1.0

    def test_geometry_bit_identical(self):
        rng = np.random.default_rng(9)
        actor = small_actor(rng)
        net = FittingNetwork(EncodingSpec().input_dim, seed=1, head_scale=0.1)
        out = apply_residuals([actor], net, 0.3)
        assert len(out[0].splats) == len(actor.splats)
        for a, b in zip(actor.splats, out[0].splats):
            assert a.center.tobytes() == b.center.tobytes()
            assert a.rotation.tobytes() == b.rotation.tobytes()
            assert a.scale.tobytes() == b.scale.tobytes()


class TestTrainingObjective:
    def test_gradient_wrt_weights(self):
        rng = np.random.default_rng(10)
        enc = EncodingSpec(l_pos=2, l_time=2)
        cam = look_at_camera([0, 1, 0], [0, 1, 3], fx=40, width=10, height=10)
        actor = small_actor(rng, n=6)
        problem = RefinementProblem([actor], [cam, cam], [0.0, 1.0], enc)
        net = FittingNetwork(enc.input_dim, width=8, seed=2, head_scale=0.02)
        target = rng.random((10, 10, 3))
        mask = np.ones((10, 10), bool)

        def loss(flat):
            net.set_flat(flat)
            return refinement_loss_and_grad(problem, net, 0, target, mask)

        assert check_gradient(loss, net.get_flat(), h=1e-6) < 1e-5

    def test_single_time_refused(self):
        rng = np.random.default_rng(11)
        actor = small_actor(rng)
        cam = look_at_camera([0, 1, 0], [0, 1, 3], fx=40, width=10, height=10)
        img = rng.random((10, 10, 3))
        with pytest.raises(ValueError, match="distinct times"):
            train_refinement([actor], [img], [np.ones((10, 10), bool)], [cam],
                             iters=1)

    def test_nothing_to_fit_stays_small(self):
        rng = np.random.default_rng(12)
        actor = small_actor(rng, n=12)
        cam = look_at_camera([0, 1, 0], [0, 1, 3], fx=45, width=14, height=14)
        problem_targets = []
        problem = RefinementProblem([actor], [cam, cam], [0.0, 1.0], EncodingSpec())
        for f in range(2):
            problem_targets.append(problem.render_with_net(None, f))
        mask = np.ones((14, 14), bool)
        net, report = train_refinement([actor], problem_targets, [mask, mask],
                                       [cam, cam], iters=120, width=32, seed=0)
        assert report["baseline_l1"] == pytest.approx(0.0, abs=1e-12)
        assert report["final_l1"] < 0.01
        dc, do = net.forward(problem.encodings[0])
        assert np.abs(dc).max() < 0.05 and np.abs(do).max() < 0.05
