"""Saliency concordance and representation similarity.

Builds activation/gradient maps whose response sits on a known blob, checks
that the saliency map lands on the mask, then compares layer representations
with CKA and two prediction vectors with Cohen's kappa.
"""

import numpy as np

from rundiag.saliency import concordance_score, gradcam_pp
from rundiag.similarity import cka, cohens_kappa, intra_cka_matrix, weight_displacement

rng = np.random.default_rng(0)

# saliency: 4 channels responding on a blob at (10, 22) of a 16x16 grid
yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
blob = np.exp(-(((yy - 10) ** 2 + (xx - 22 / 2) ** 2) / 8.0))
acts = np.stack([blob * rng.uniform(0.5, 1.5) for _ in range(4)])
grads = np.stack([blob * rng.uniform(0.3, 1.0) for _ in range(4)])
smap = gradcam_pp(acts, grads, (64, 64))

mask_hit = np.zeros((64, 64), bool)
mask_hit[36:48, 38:50] = True              # covers the blob
mask_miss = np.zeros((64, 64), bool)
mask_miss[:8, :8] = True                   # far corner
print(f"saliency peak at {np.unravel_index(smap.values.argmax(), (64, 64))}")
print(f"concordance on covering mask: {concordance_score(smap, mask_hit):.2f}")
print(f"concordance on far mask:      {concordance_score(smap, mask_miss):.2f}")

# similarity: layers that share structure score high, independent ones do not
base = rng.normal(size=(400, 32))
layers = [
    base,
    base @ rng.normal(size=(32, 16)),                     # linear readout of base
    0.5 * base @ rng.normal(size=(32, 16)) + rng.normal(size=(400, 16)),
    rng.normal(size=(400, 16)),                           # unrelated
]
mat = intra_cka_matrix(layers)
print("\nintra-CKA matrix (rounded):")
print(np.round(mat, 3))

c1 = rng.random(5000) < 0.8
agree = c1.copy()
flip = rng.random(5000) < 0.1
agree[flip] = ~agree[flip]                 # 90% agreement
print(f"\nkappa, 90%-agreeing models:  {cohens_kappa(c1, agree):.3f}")
print(f"kappa, independent models:   {cohens_kappa(c1, rng.random(5000) < 0.8):.3f}")

# weight displacement: a cooling training run moves less and less
snaps = np.cumsum(rng.normal(size=(8, 500)) / np.arange(1, 9)[:, None], axis=0)
print(f"\nweight displacement per step: {np.round(weight_displacement(snaps), 2)}")
