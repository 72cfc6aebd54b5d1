"""Demo 7 - the full pipeline through the CLI, stage by stage.

Drives synth -> align-depth -> position -> track -> mask -> refine -> eval
-> report on one bundle directory, exactly as the `stagekit` console command
would, and prints the resulting metrics.
"""

import json
import os
import shutil

from stagekit import cli

bundle = os.path.join(os.path.dirname(__file__), "out", "bundle")
shutil.rmtree(bundle, ignore_errors=True)

steps = [
    ["synth", bundle, "--seed", "7", "--frames", "8", "--shots", "2",
     "--width", "64", "--height", "64"],
    ["align-depth", bundle],
    ["position", bundle, "--iters-scale", "0.05"],
    ["track", bundle],
    ["mask", bundle],
    ["refine", bundle, "--refine-iters", "60"],
    ["eval", bundle],
    ["report", bundle],
]
for argv in steps:
    print(f"$ stagekit {' '.join(argv)}")
    code = cli.run(argv)
    assert code == 0, f"step failed with exit code {code}"

with open(os.path.join(bundle, "report.json")) as f:
    report = json.load(f)
print("\nreport metrics:")
for name, value in sorted(report["metrics"].items()):
    print(f"  {name:36s} {value:.6f}")
