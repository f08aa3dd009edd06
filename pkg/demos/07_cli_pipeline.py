"""The full command-line pipeline on a synthetic bundle.

Equivalent shell session:

    rundiag synth --out bundle --preset smoke --seed 0
    rundiag hardness    --manifest bundle/manifest.json --out results
    rundiag sensitivity --scores bundle/scores.json     --out results
    rundiag memorize    --folds bundle/folds.json       --out results
    rundiag dims        --manifest bundle/manifest.json --out results --channel-pca 3
    rundiag similarity  --manifest bundle/manifest.json --out results
    rundiag uq          --manifest bundle/manifest.json --out results
    rundiag saliency    --manifest bundle/manifest.json --out results
    rundiag report      --run results                   --out results/report
"""

import tempfile
from pathlib import Path

from rundiag import cli

work = Path(tempfile.mkdtemp(prefix="rundiag-pipeline-"))
bundle = work / "bundle"
results = work / "results"

assert cli.run(["synth", "--out", str(bundle), "--preset", "smoke", "--seed", "0"]) == 0
manifest = str(bundle / "manifest.json")

steps = [
    ["hardness", "--manifest", manifest],
    ["sensitivity", "--scores", str(bundle / "scores.json")],
    ["memorize", "--folds", str(bundle / "folds.json")],
    ["dims", "--manifest", manifest, "--channel-pca", "3"],
    ["similarity", "--manifest", manifest],
    ["uq", "--manifest", manifest, "--q-max", "30"],
    ["saliency", "--manifest", manifest],
]
for argv in steps:
    rc = cli.run(argv + ["--out", str(results)])
    print(f"{argv[0]:<12} exit {rc}")

rc = cli.run(["report", "--run", str(results), "--out", str(results / "report")])
print(f"{'report':<12} exit {rc}")
print("\nartifacts:")
for p in sorted(results.rglob("*")):
    if p.is_file():
        print(" ", p.relative_to(work))
