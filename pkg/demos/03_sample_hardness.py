"""Sample hardness from training dynamics, and hard-subset memorization.

Plants per-sample learning times, computes the trace-based hardness metrics
and their composite, and checks that the composite recovers the planted
ordering. Then simulates the two-condition (in/out) correctness vectors on the
hard subset and reports the memorization tendency MT_H.
"""

import numpy as np
from scipy.stats import spearmanr

from rundiag.hardness import aum, composite, el2n, forgetting_score, learning_speed
from rundiag.memorization import FoldPair, mt_hard, select_hard_subset
from rundiag.synth import gen_training_dynamics

rng = np.random.default_rng(1)
N, T = 1500, 10
learn_times = rng.integers(1, 13, N)  # > T means never reliably learned
labels, logits, correct = gen_training_dynamics(N, T, learn_times, flip_rate=0.05, seed=1)

raw = {
    "learning_speed": learning_speed(correct),
    "forgetting": forgetting_score(correct).astype(float),
    "aum": aum(logits, labels),
    "el2n": el2n(logits, labels),
}
profile = composite(raw)
for name in raw:
    arrow = "^" if profile.directions[name] > 0 else "v"
    print(f"{name:<16} direction {arrow}  raw range "
          f"[{profile.raw[name].min():+.3f}, {profile.raw[name].max():+.3f}]")

rho = spearmanr(profile.composite, learn_times).statistic
print(f"Spearman(composite, planted learn time) = {rho:.3f}")

# top-5% hardest ids, ties toward the lower id
hard = select_hard_subset(profile.composite, fraction=0.05)
print(f"hard subset: {len(hard)} samples, mean learn time "
      f"{learn_times[hard].mean():.1f} vs {learn_times.mean():.1f} overall")

# memorization: hard samples are right more often when trained on
folds = []
for k in range(5):
    frng = np.random.default_rng(10 + k)
    c_in = frng.random(len(hard)) < 0.55
    c_out = frng.random(len(hard)) < 0.30
    folds.append(FoldPair(k, hard, c_in, c_out))
print(f"MT_H over 5 folds = {mt_hard(folds):+.3f} (hard-subset approximation)")
