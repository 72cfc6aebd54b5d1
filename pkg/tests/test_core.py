import numpy as np
import pytest

from stagekit.core import (CameraModel, DegenerateInputError, DepthRaster, Splat,
                           SplatSet, compute_scene_radius, look_at_camera,
                           project_point, quat_from_axis_angle, quat_mul,
                           quat_slerp, quat_to_matrix, read_dpt1, sample_bilinear,
                           unproject_point, write_dpt1)


def identity_camera(fx=100.0, cx=50.0, cy=50.0, w=100, h=100):
    return CameraModel(fx=fx, fy=fx, cx=cx, cy=cy, rotation=np.eye(3),
                       translation=np.zeros(3), width=w, height=h)


class TestProjection:
    def test_principal_ray(self):
        cam = identity_camera()
        uv, z, behind = project_point(cam, [0.0, 0.0, 2.0])
        assert not behind
        assert z == 2.0
        np.testing.assert_allclose(uv, [50.0, 50.0])

    def test_offaxis_hand_value(self):
        # pinhole: u = fx*x/z + cx = 100*1/2 + 50 = 100
        cam = identity_camera()
        uv, z, behind = project_point(cam, [1.0, 0.0, 2.0])
        np.testing.assert_allclose(uv, [100.0, 50.0])
        assert z == 2.0

    def test_behind_camera_flagged(self):
        cam = identity_camera()
        _, z, behind = project_point(cam, [0.0, 0.0, -1.0])
        assert behind and z == -1.0

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        cam = look_at_camera([0.3, 1.5, -0.2], [0, 1, 3], fx=80, width=64, height=64)
        p = rng.normal([0, 1, 3], 0.6, size=(50, 3))
        uv, z, behind = project_point(cam, p)
        assert not behind.any()
        back = unproject_point(cam, uv, z)
        np.testing.assert_allclose(back, p, rtol=0, atol=1e-9)

    def test_camera_invariants(self):
        with pytest.raises(ValueError):
            CameraModel(fx=-1, fy=1, cx=5, cy=5, rotation=np.eye(3),
                        translation=np.zeros(3), width=10, height=10)
        bad_rot = np.eye(3)
        bad_rot[0, 0] = 1.1
        with pytest.raises(ValueError):
            CameraModel(fx=10, fy=10, cx=5, cy=5, rotation=bad_rot,
                        translation=np.zeros(3), width=10, height=10)


class TestSceneRadius:
    def test_unit_cube_corners(self):
        corners = np.array([[sx, sy, sz] for sx in (-0.5, 0.5)
                            for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
        r = compute_scene_radius(corners)
        np.testing.assert_allclose(r.r_stage, np.sqrt(0.75), atol=1e-12)

    def test_two_points(self):
        r = compute_scene_radius([[1, 0, 0], [-1, 0, 0]])
        assert r.r_stage == 1.0

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            compute_scene_radius(np.zeros((0, 3)))
        with pytest.raises(DegenerateInputError):
            compute_scene_radius([[1.0, 2.0, 3.0]])


class TestSplat:
    def test_covariance_spd(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            sp = Splat(center=rng.normal(size=3), rotation=q,
                       scale=rng.uniform(0.05, 2.0, 3), color=rng.random(3),
                       opacity=rng.random())
            cov = sp.covariance()
            np.testing.assert_allclose(cov, cov.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            Splat(center=[0, 0, 0], rotation=[1, 0.1, 0, 0], scale=[1, 1, 1],
                  color=[0, 0, 0], opacity=0.5)
        with pytest.raises(ValueError):
            Splat(center=[0, 0, 0], rotation=[1, 0, 0, 0], scale=[0, 1, 1],
                  color=[0, 0, 0], opacity=0.5)
        with pytest.raises(ValueError):
            Splat(center=[0, 0, 0], rotation=[1, 0, 0, 0], scale=[1, 1, 1],
                  color=[0, 0, 0], opacity=1.5)

    def test_composite_tags_disjoint(self):
        from stagekit.core import composite_scene
        stage = SplatSet(splats=[], tag="stage")
        a0 = SplatSet(splats=[], tag="actor:0")
        with pytest.raises(ValueError):
            composite_scene(stage, [a0, SplatSet(splats=[], tag="actor:0")])
        assert len(composite_scene(stage, [a0])) == 2


class TestQuaternions:
    def test_axis_angle_matrix(self):
        q = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        R = quat_to_matrix(q)
        np.testing.assert_allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_mul_composes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            qa = rng.normal(size=4)
            qa /= np.linalg.norm(qa)
            qb = rng.normal(size=4)
            qb /= np.linalg.norm(qb)
            np.testing.assert_allclose(quat_to_matrix(quat_mul(qa, qb)),
                                       quat_to_matrix(qa) @ quat_to_matrix(qb),
                                       atol=1e-12)

    def test_slerp_midpoint(self):
        qa = quat_from_axis_angle([0, 0, 1], 0.0)
        qb = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        mid = quat_slerp(qa, qb, 0.5)
        np.testing.assert_allclose(mid, quat_from_axis_angle([0, 0, 1], np.pi / 4),
                                   atol=1e-12)


class TestDepthRaster:
    def test_validity_enforced(self):
        with pytest.raises(ValueError):
            DepthRaster(values=np.array([[1.0, -2.0]]),
                        validity=np.array([[True, True]]))

    def test_bilinear_interior(self):
        vals = np.array([[1.0, 2.0], [3.0, 4.0]])
        r = DepthRaster.from_values(vals)
        v, g, ok = sample_bilinear(r, [0.5, 0.5])
        assert ok
        assert v == pytest.approx(2.5)
        np.testing.assert_allclose(g, [1.0, 2.0])

    def test_bilinear_invalid_neighbor_drops(self):
        vals = np.array([[1.0, np.nan], [3.0, 4.0]])
        r = DepthRaster(values=vals, validity=np.isfinite(vals))
        _, _, ok = sample_bilinear(r, [0.5, 0.5])
        assert not ok

    def test_dpt1_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        for i in range(5):
            vals = rng.uniform(0.5, 9.0, size=(7, 5))
            vals[rng.random((7, 5)) < 0.3] = np.nan
            raster = DepthRaster(values=vals, validity=np.isfinite(vals))
            path = tmp_path / f"r{i}.dpt"
            write_dpt1(path, raster)
            back = read_dpt1(path)
            # bit-exact after a second round trip
            path2 = tmp_path / f"r{i}b.dpt"
            write_dpt1(path2, back)
            assert path.read_bytes() == path2.read_bytes()
            np.testing.assert_array_equal(back.validity, raster.validity)
            np.testing.assert_allclose(back.values[back.validity],
                                       raster.values[raster.validity], rtol=1e-7)

    def test_dpt1_header(self, tmp_path):
        path = tmp_path / "r.dpt"
        write_dpt1(path, DepthRaster.from_values(np.full((2, 3), 1.5)))
        blob = path.read_bytes()
        assert blob[:4] == b"DPT1"
        assert int.from_bytes(blob[4:8], "little") == 3  # width
        assert int.from_bytes(blob[8:12], "little") == 2  # height
        assert len(blob) == 12 + 4 * 6
