import json
import os

import pytest

from stagekit import cli, pipeline
from stagekit.positioning import PositioningConfig
from stagekit.synth import SceneSpec

SMALL = dict(width=40, height=40, fx=50.0, n_frames=6, n_shots=2, n_actors=1)


def synth_small(bundle, seed=0, **kw):
    spec = SceneSpec(**{**SMALL, **kw})
    return pipeline.cmd_synth(str(bundle), seed=seed, spec=spec)


def fast_cfg(**kw):
    return PositioningConfig(iters_scale=0.01, **kw)  # 60/20 iterations


class TestBundleRoundTrip:
    def test_manifest_save_load_save_byte_identical(self, tmp_path):
        bundle = tmp_path / "b"
        synth_small(bundle, seed=3)
        path = bundle / pipeline.MANIFEST_NAME
        first = path.read_bytes()
        manifest = pipeline.load_manifest(str(bundle))
        pipeline.save_manifest(str(bundle), manifest)
        assert path.read_bytes() == first

    def test_rasters_parse_and_exist(self, tmp_path):
        bundle = tmp_path / "b"
        manifest = synth_small(bundle, seed=4)
        for frame in manifest["frames"]:
            for key in ("mono", "image", "stage_mask", "stage_points"):
                assert (bundle / frame[key]).exists()
        from stagekit.core import read_dpt1
        raster = read_dpt1(bundle / manifest["frames"][0]["mono"])
        assert raster.width == SMALL["width"]

    def test_splats_and_points_round_trip(self, tmp_path):
        bundle = tmp_path / "b"
        manifest = synth_small(bundle, seed=5)
        splats = pipeline.read_splats_bin(str(bundle / manifest["stage_splats"]), "stage")
        assert len(splats) > 100
        pipeline.write_splats_bin(str(bundle / "again.bin"), splats)
        assert (bundle / "again.bin").read_bytes() == \
            (bundle / manifest["stage_splats"]).read_bytes()
        pts = pipeline.read_points_bin(str(bundle / manifest["frames"][0]["stage_points"]))
        assert pts.shape[1] == 3 and len(pts) >= 10


class TestStageOrdering:
    def test_position_before_align_rejected(self, tmp_path):
        bundle = tmp_path / "b"
        synth_small(bundle)
        with pytest.raises(pipeline.PipelineOrderError, match="align-depth"):
            pipeline.cmd_position(str(bundle), cfg=fast_cfg())

    def test_track_before_position_rejected(self, tmp_path):
        bundle = tmp_path / "b"
        synth_small(bundle)
        pipeline.cmd_align_depth(str(bundle))
        with pytest.raises(pipeline.PipelineOrderError, match="position"):
            pipeline.cmd_track(str(bundle))

    def test_missing_bundle_rejected(self, tmp_path):
        with pytest.raises(pipeline.PipelineOrderError, match="synth"):
            pipeline.cmd_align_depth(str(tmp_path / "nope"))


class TestFullChain:
    def test_pipeline_end_to_end(self, tmp_path):
        bundle = tmp_path / "b"
        synth_small(bundle, seed=7)
        manifest = pipeline.cmd_align_depth(str(bundle))
        fits = manifest["depth_fits"]
        assert all(f["accepted"] for f in fits)
        for f in fits:
            assert f["a"] == pytest.approx(2.0, abs=1e-5)
            assert f["b"] == pytest.approx(0.5, abs=1e-5)

        manifest = pipeline.cmd_position(str(bundle), cfg=fast_cfg())
        assert len(manifest["solutions"]) == 2  # one per shot
        loss_csv = bundle / manifest["solutions"][0]["loss_csv"]
        lines = loss_csv.read_text().splitlines()
        assert lines[0] == pipeline.LOSS_CSV_HEADER
        assert len(lines) == 1 + 60 + 20  # header + stage1 + stage2

        manifest = pipeline.cmd_track(str(bundle))
        assert (bundle / manifest["tracks_csv"]).exists()

        manifest = pipeline.cmd_mask(str(bundle))
        assert len(manifest["foreground_masks"]) == SMALL["n_frames"]

        manifest = pipeline.cmd_refine(str(bundle), iters=10)
        assert (bundle / manifest["refine"]["net_blob"]).exists()

        payload = pipeline.cmd_eval(str(bundle))
        assert payload["command"] == "eval"
        assert "jerk_mean" in payload["metrics"]
        assert payload["metrics"]["depth_fit_a_relerr_max"] < 1e-5

        report = pipeline.cmd_report(str(bundle))
        assert report["loss_curves"]
        assert (bundle / pipeline.REPORT_NAME).exists()

    def test_idempotent_rerun(self, tmp_path):
        bundle = tmp_path / "b"
        synth_small(bundle, seed=8)
        pipeline.cmd_align_depth(str(bundle))
        blob = (bundle / "rasters/aligned_f0000.dpt").read_bytes()
        manifest_blob = (bundle / pipeline.MANIFEST_NAME).read_bytes()
        pipeline.cmd_align_depth(str(bundle))
        assert (bundle / "rasters/aligned_f0000.dpt").read_bytes() == blob
        assert (bundle / pipeline.MANIFEST_NAME).read_bytes() == manifest_blob


class TestOcclusionTracking:
    def test_occlusion_gap_interpolated_in_tracks(self, tmp_path):
        from stagekit import tracking
        bundle = tmp_path / "b"
        spec = SceneSpec(width=40, height=40, fx=50.0, n_frames=6, n_shots=1,
                         n_actors=1, occlusion_windows=((0, 2, 4),))
        pipeline.cmd_synth(str(bundle), seed=9, spec=spec)
        pipeline.cmd_align_depth(str(bundle))
        pipeline.cmd_position(str(bundle), cfg=fast_cfg())
        manifest = pipeline.cmd_track(str(bundle))
        tracks = tracking.read_track_csv(str(bundle / manifest["tracks_csv"]))
        provenance = {f: tracks[0].states[f].provenance for f in tracks[0].frames()}
        assert provenance[2] == tracking.PROVENANCE_INTERPOLATED
        assert provenance[3] == tracking.PROVENANCE_INTERPOLATED
        for f in (0, 1, 4, 5):
            assert provenance[f] == tracking.PROVENANCE_VISIBLE


class TestJerkAblationViaCli:
    def test_ablated_run_reports_higher_jerk(self, tmp_path):
        jerks = {}
        for tag, extra in (("default", []), ("ablated", ["--lambda-traj", "0"])):
            bundle = str(tmp_path / tag)
            assert cli.run(["synth", bundle, "--seed", "21", "--frames", "12",
                            "--shots", "1", "--width", "96", "--height", "96",
                            "--depth-frame-jitter", "0.12"]) == 0
            assert cli.run(["align-depth", bundle]) == 0
            assert cli.run(["position", bundle, "--iters-scale", "0.05"]
                           + extra) == 0
            payload = pipeline.cmd_eval(bundle)
            jerks[tag] = payload["metrics"]["jerk_mean"]
        assert jerks["ablated"] > 2 * jerks["default"]


class TestCli:
    def test_cli_chain_and_flags(self, tmp_path):
        bundle = str(tmp_path / "b")
        assert cli.run(["synth", bundle, "--seed", "2", "--frames", "6",
                        "--shots", "2", "--width", "40", "--height", "40"]) == 0
        assert cli.run(["align-depth", bundle]) == 0
        assert cli.run(["position", bundle, "--iters-scale", "0.01",
                        "--lambda-traj", "0.25", "--tau", "500"]) == 0
        manifest = pipeline.load_manifest(bundle)
        assert manifest["config"]["lambda_traj"] == 0.25
        assert manifest["config"]["tau"] == 500.0
        assert cli.run(["track", bundle, "--match-threshold", "1.5"]) == 0
        assert pipeline.load_manifest(bundle)["match_threshold"] == 1.5
        assert cli.run(["eval", bundle]) == 0
        assert cli.run(["report", bundle]) == 0

    def test_out_of_order_exit_code(self, tmp_path):
        bundle = str(tmp_path / "b")
        assert cli.run(["synth", bundle, "--frames", "4", "--shots", "1",
                        "--width", "32", "--height", "32"]) == 0
        assert cli.run(["position", bundle]) == 2

    def test_unknown_flag_rejected(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.run(["align-depth", str(tmp_path), "--no-such-flag"])
        assert exc.value.code == 2

    def test_metrics_json_schema(self, tmp_path):
        bundle = str(tmp_path / "b")
        cli.run(["synth", bundle, "--frames", "6", "--shots", "2",
                 "--width", "40", "--height", "40"])
        cli.run(["align-depth", bundle])
        cli.run(["position", bundle, "--iters-scale", "0.01"])
        cli.run(["eval", bundle])
        with open(os.path.join(bundle, pipeline.METRICS_NAME)) as f:
            payload = json.load(f)
        assert set(payload) >= {"command", "seed", "config", "metrics"}
        assert all(isinstance(v, (int, float)) for v in payload["metrics"].values())
