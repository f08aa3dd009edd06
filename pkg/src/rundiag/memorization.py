"""Feldman-style memorization scoring on hard subsets.

The engine never retrains: it consumes, per fold, the correctness of the hard
subset H_k under two training conditions (subset included vs. held out) and
reports the mean accuracy gap. The result is the memorization tendency over
hard subsets only (MT_H) and is labeled as such everywhere it is emitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TelemetryError


@dataclass(frozen=True)
class FoldPair:
    fold: int
    hard_ids: np.ndarray        # sample ids of the top-hardness subset H_k
    correct_in: np.ndarray      # correctness over H_k, model trained with H_k
    correct_out: np.ndarray     # correctness over H_k, model trained without H_k
    test_acc_before: float | None = None
    test_acc_after: float | None = None

    def __post_init__(self):
        n = len(self.hard_ids)
        if n == 0:
            raise TelemetryError(f"fold {self.fold}: empty hard subset")
        if len(self.correct_in) != n or len(self.correct_out) != n:
            raise TelemetryError(
                f"fold {self.fold}: correctness vectors must cover exactly the "
                f"{n} hard-subset samples"
            )


def select_hard_subset(composite, fraction=0.05):
    """Ids of the ceil(fraction*N) samples with the largest composite hardness.

    Ties at the cutoff break toward the lower id, so the selection is a pure
    function of the scores.
    """
    if not 0.0 < fraction < 1.0:
        raise TelemetryError(f"fraction must be in (0,1), got {fraction}")
    scores = np.asarray(composite, dtype=np.float64)
    n = scores.shape[0]
    count = int(np.ceil(fraction * n))
    # lexsort: primary key -score (descending), secondary key id (ascending)
    order = np.lexsort((np.arange(n), -scores))
    return np.sort(order[:count])


def fold_gap(fold: FoldPair):
    """In-training accuracy minus held-out accuracy on the hard subset."""
    return float(np.mean(fold.correct_in)) - float(np.mean(fold.correct_out))


def mt_hard(folds):
    """Mean over folds of the hard-subset accuracy gap (range [-1, 1])."""
    folds = list(folds)
    if not folds:
        raise TelemetryError("mt_hard needs at least one fold")
    return float(np.mean([fold_gap(f) for f in folds]))


def mem_score(in_correct_prob, out_correct_prob):
    """Excess probability of correctness from including the sample in training.

    Probabilities are empirical frequencies over however many training seeds
    the telemetry provides (one or more).
    """
    p_in = float(in_correct_prob)
    p_out = float(out_correct_prob)
    for name, p in (("in", p_in), ("out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise TelemetryError(f"{name}-correct probability {p} outside [0, 1]")
    return p_in - p_out
