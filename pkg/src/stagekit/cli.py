"""Command-line pipeline driver.

Commands compose in pipeline order over one bundle directory:

    stagekit synth BUNDLE --seed 7 --frames 24 --shots 2
    stagekit align-depth BUNDLE
    stagekit position BUNDLE --iters-scale 0.1 --lambda-traj 0.5
    stagekit track BUNDLE
    stagekit mask BUNDLE
    stagekit refine BUNDLE --refine-iters 200
    stagekit eval BUNDLE
    stagekit report BUNDLE

Out-of-order invocation fails with a stage-dependency error (exit code 2).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline, synth
from .core import DegenerateInputError
from .positioning import PositioningConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stagekit",
                                     description="scene positioning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_bundle(p):
        p.add_argument("bundle", help="bundle directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic scene bundle")
    add_bundle(p_synth)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--frames", type=int, default=24)
    p_synth.add_argument("--shots", type=int, default=2)
    p_synth.add_argument("--actors", type=int, default=1)
    p_synth.add_argument("--width", type=int, default=64)
    p_synth.add_argument("--height", type=int, default=64)
    p_synth.add_argument("--couch", action="store_true")
    p_synth.add_argument("--depth-sigma", type=float, default=0.0)
    p_synth.add_argument("--depth-frame-jitter", type=float, default=0.0)
    p_synth.add_argument("--outlier-rate", type=float, default=0.0)
    p_synth.add_argument("--keypoint-sigma", type=float, default=0.0)
    p_synth.add_argument("--pose-noise", type=float, default=0.0)

    p_align = sub.add_parser("align-depth", help="fit per-frame depth scale/offset")
    add_bundle(p_align)
    p_align.add_argument("--delta1", type=float, default=None,
                         help="Huber threshold (default r_stage/100)")

    p_pos = sub.add_parser("position", help="optimize actor placements")
    add_bundle(p_pos)
    p_pos.add_argument("--seed", type=int, default=0)
    p_pos.add_argument("--iters-scale", type=float, default=0.1)
    p_pos.add_argument("--lambda-depth", type=float, default=1.0)
    p_pos.add_argument("--lambda-kpt", type=float, default=1.0)
    p_pos.add_argument("--lambda-traj", type=float, default=0.5)
    p_pos.add_argument("--lambda-penet", type=float, default=0.001)
    p_pos.add_argument("--delta2", type=float, default=None,
                       help="Huber threshold (default r_stage/20)")
    p_pos.add_argument("--tau", type=float, default=1000.0)

    p_track = sub.add_parser("track", help="associate actors across shots")
    add_bundle(p_track)
    p_track.add_argument("--match-threshold", type=float, default=None,
                         help="default 0.15 * r_stage")
    p_track.add_argument("--horizon", type=int, default=30)

    p_mask = sub.add_parser("mask", help="compute foreground masks")
    add_bundle(p_mask)

    p_refine = sub.add_parser("refine", help="train the residual appearance net")
    add_bundle(p_refine)
    p_refine.add_argument("--refine-iters", type=int, default=200)
    p_refine.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("eval", help="compute metrics (MTED/MPED, errors)")
    add_bundle(p_eval)

    p_report = sub.add_parser("report", help="collate metrics and loss curves")
    add_bundle(p_report)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            spec = synth.SceneSpec(width=args.width, height=args.height,
                                   n_frames=args.frames, n_shots=args.shots,
                                   n_actors=args.actors, couch=args.couch,
                                   depth_sigma=args.depth_sigma,
                                   depth_frame_jitter=args.depth_frame_jitter,
                                   outlier_rate=args.outlier_rate,
                                   keypoint_sigma=args.keypoint_sigma,
                                   pose_noise=args.pose_noise)
            pipeline.cmd_synth(args.bundle, seed=args.seed, spec=spec)
        elif args.command == "align-depth":
            pipeline.cmd_align_depth(args.bundle, delta1=args.delta1)
        elif args.command == "position":
            cfg = PositioningConfig(lambda_depth=args.lambda_depth,
                                    lambda_kpt=args.lambda_kpt,
                                    lambda_traj=args.lambda_traj,
                                    lambda_penet=args.lambda_penet,
                                    delta2=args.delta2, tau=args.tau,
                                    iters_scale=args.iters_scale)
            pipeline.cmd_position(args.bundle, cfg=cfg)
        elif args.command == "track":
            pipeline.cmd_track(args.bundle, match_threshold=args.match_threshold,
                               horizon=args.horizon)
        elif args.command == "mask":
            pipeline.cmd_mask(args.bundle)
        elif args.command == "refine":
            pipeline.cmd_refine(args.bundle, iters=args.refine_iters, seed=args.seed)
        elif args.command == "eval":
            payload = pipeline.cmd_eval(args.bundle)
            print(json.dumps(payload["metrics"], indent=1, sort_keys=True))
        elif args.command == "report":
            report = pipeline.cmd_report(args.bundle)
            print(json.dumps(report, indent=1, sort_keys=True))
    except pipeline.PipelineOrderError as exc:
        print(f"stage dependency error: {exc}", file=sys.stderr)
        return 2
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
