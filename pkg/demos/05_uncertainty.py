"""Calibration, epistemic uncertainty, and abstention.

Fits training-fold statistics on two Gaussian classes, scores an eval set
containing a far out-of-distribution cluster with all nine estimators, and
shows the abstention (ECE-vs-rejection) behavior of one good and one useless
uncertainty signal.
"""

import numpy as np

from rundiag.synth import gen_calibrated_predictor, gen_gaussian_classes
from rundiag.uncertainty import (
    EUScore,
    alignment_score,
    auroc,
    eu_scores,
    fit_train_stats,
    smooth_ece,
)

# calibration: a calibrated predictor vs a uniformly overconfident one
p, correct = gen_calibrated_predictor(50_000, seed=0)
print(f"calibrated predictor     smECE = {smooth_ece(p, correct):.4f}")
p_over = np.clip(p + 0.15, 0, 1)
print(f"overconfident predictor  smECE = {smooth_ece(p_over, correct):.4f}")

# epistemic uncertainty: two classes + a far cluster the model never saw
g = gen_gaussian_classes(2, 16, separation=10.0, N=2000, seed=0)
stats = fit_train_stats(g.features, g.labels, class_prior=g.prior,
                        head_weights=g.head_weights, head_bias=g.head_bias)
eval_feats = np.vstack([g.features[:1000], g.ood])
eval_logits = eval_feats @ g.head_weights.T + g.head_bias
is_ood = np.arange(len(eval_feats)) >= 1000

scores, skipped = eu_scores(eval_feats, eval_logits, stats)
print("\nOOD separation (AUROC of oriented EU score vs cluster membership):")
for s in scores:
    arrow = "^" if s.direction > 0 else "v"
    print(f"  {s.name:<12} {arrow}  AUROC {auroc(s.direction * s.values, is_ood):.3f}")
if skipped:
    print("skipped:", skipped)

# abstention: reject the most-uncertain samples, watch calibration error
rng = np.random.default_rng(3)
n = 20_000
conf = np.concatenate([rng.uniform(0.9, 1.0, int(0.7 * n)),
                       rng.uniform(0.6, 0.9, n - int(0.7 * n))])
hit = np.concatenate([rng.random(int(0.7 * n)) < conf[: int(0.7 * n)],
                      rng.random(n - int(0.7 * n)) < conf[int(0.7 * n):] - 0.5])
oracle = EUScore("oracle", np.abs(hit.astype(float) - conf), +1)
noise = EUScore("noise", rng.normal(size=n), +1)
print(f"\nalignment score, oracle EU:      {alignment_score(oracle, conf, hit):.3f}  (lower is better)")
print(f"alignment score, independent EU: {alignment_score(noise, conf, hit):.3f}  (1 = random rejection)")
