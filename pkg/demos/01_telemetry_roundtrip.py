"""Telemetry basics: tensor files, manifests, standardization.

Writes a tiny synthetic run bundle to a temp directory, loads it back through
the validating loader, and standardizes the image stack.
"""

import tempfile
from pathlib import Path

import numpy as np

from rundiag import load_run, read_tensor, standardize, write_tensor
from rundiag.synth import write_synth_bundle

workdir = Path(tempfile.mkdtemp(prefix="rundiag-demo-"))
manifest = write_synth_bundle(workdir, preset="smoke", seed=0)
print(f"bundle written to {workdir}")

run = load_run(manifest)
print(f"run '{run.manifest.run_id}': N={run.num_samples}, C={run.num_classes}, "
      f"T={run.num_checkpoints}")
print(f"feature layers: { {k: v.shape for k, v in run.features.items()} }")

# tensor files round-trip byte-for-byte
first_logits = workdir / "logits_t0.spt"
arr = read_tensor(first_logits)
write_tensor(workdir / "copy.spt", arr)
print("round-trip bytes identical:",
      first_logits.read_bytes() == (workdir / "copy.spt").read_bytes())

# per-channel Gaussian standardization over the whole stack
images = standardize(run.images)
for c in range(images.shape[-1]):
    ch = images[..., c].astype(np.float64)
    print(f"channel {c}: mean {ch.mean():+.2e}, var {ch.var():.6f}")

# correctness trace derived from logits + labels
correct = run.correctness()
print(f"accuracy per checkpoint: {np.round(correct.mean(axis=0), 3)}")
