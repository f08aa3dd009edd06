"""Per-sample hardness estimators from training dynamics and geometry.

Seven estimators, each with a documented direction (whether larger raw values
mean *harder* samples), plus a composite that min-max normalizes every
available metric to [0,1], flips the decreasing ones, and averages.

Direction flags: learning_speed (down), forgetting (up), aum (down),
el2n (up), prediction_depth (up), vog (up), prototypicality (up).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import TelemetryError
from .gaussians import fit_class_gaussians, mahalanobis_to_means

# direction of increasing hardness per metric: +1 = raw up means harder
DIRECTIONS = {
    "learning_speed": -1,
    "forgetting": +1,
    "aum": -1,
    "el2n": +1,
    "prediction_depth": +1,
    "vog": +1,
    "prototypicality": +1,
}


def learning_speed(correctness):
    """Mean correctness over checkpoints; slow learners score low."""
    c = np.asarray(correctness, dtype=np.float64)
    return c.mean(axis=1)


def forgetting_score(correctness):
    """Number of correct -> incorrect transitions along the trace."""
    c = np.asarray(correctness, dtype=bool)
    return (c[:, :-1] & ~c[:, 1:]).sum(axis=1).astype(np.int64)


def aum(logits, labels):
    """Average margin z_y - max_{c != y} z_c over checkpoints. (T, N, C) in."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    t_, n_, c_ = z.shape
    true = z[:, np.arange(n_), y]
    masked = z.copy()
    masked[:, np.arange(n_), y] = -np.inf
    if c_ == 1:
        raise TelemetryError("aum needs at least two classes")
    best_other = masked.max(axis=2)
    return (true - best_other).mean(axis=0)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def el2n(logits, labels):
    """Mean over checkpoints of ||softmax(z) - onehot(y)||_2."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    p = softmax(z, axis=2)
    p[:, np.arange(z.shape[1]), y] -= 1.0
    return np.sqrt((p**2).sum(axis=2)).mean(axis=0)


def knn_vote(features, labels, k, num_classes):
    """Leave-self-out k-NN majority vote; vote ties break to the lower class."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    n = x.shape[0]
    k = min(k, n - 1)
    dist = cdist(x, x)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = np.zeros((n, num_classes), dtype=np.int64)
    for c in range(num_classes):
        votes[:, c] = (y[order] == c).sum(axis=1)
    return np.argmax(votes, axis=1)  # first max = lower class on ties


def prediction_depth(layer_features, labels, num_classes, k=25):
    """Earliest probed layer whose k-NN vote matches the label.

    ``layer_features`` is an ordered sequence of (N, n_l) matrices, shallowest
    first. Depth is the 1-based position of the first layer that classifies
    the sample correctly, or L+1 if none does.
    """
    y = np.asarray(labels)
    n = y.shape[0]
    depth = np.full(n, len(layer_features) + 1, dtype=np.int64)
    for pos, feats in enumerate(layer_features, start=1):
        correct = knn_vote(feats, y, k, num_classes) == y
        depth = np.where((depth > len(layer_features)) & correct, pos, depth)
    return depth


def vog(grad_magnitudes):
    """Population variance of per-checkpoint gradient magnitudes, per sample."""
    g = np.asarray(grad_magnitudes, dtype=np.float64)
    return g.var(axis=1)


def prototypicality(features, labels, fit_features=None, fit_labels=None):
    """Mahalanobis distance to the nearest class centroid.

    The Gaussian (class means, shared shrunk covariance) is fitted on
    ``fit_features``/``fit_labels`` when given, otherwise on the scored data
    itself; at desk scale the scored data *is* the training split.
    """
    if fit_features is None:
        fit_features, fit_labels = features, labels
    fit = fit_class_gaussians(fit_features, fit_labels)
    return mahalanobis_to_means(features, fit).min(axis=1)


@dataclass
class HardnessProfile:
    raw: dict                      # metric -> (N,) raw scores
    normalized: dict               # metric -> (N,) scores in [0,1], hardness-oriented
    composite: np.ndarray          # (N,) mean of available normalized scores
    directions: dict               # metric -> +1 / -1 (raw direction of hardness)
    degenerate: dict = field(default_factory=dict)  # metric -> True when min == max

    @property
    def metrics(self):
        return tuple(self.raw)


def _normalize(values, direction):
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.full(v.shape, 0.5), True
    scaled = (v - lo) / (hi - lo)
    if direction < 0:
        scaled = 1.0 - scaled
    return scaled, False


def composite(raw_scores) -> HardnessProfile:
    """Min-max normalize each metric, flip decreasing ones, average equally.

    ``raw_scores`` maps metric names (a subset of DIRECTIONS) to (N,) arrays.
    Metrics missing from the telemetry simply stay out of the mean; a metric
    that is constant across the dataset contributes 0.5 everywhere and is
    flagged degenerate.
    """
    if not raw_scores:
        raise TelemetryError("composite needs at least one hardness metric")
    unknown = set(raw_scores) - set(DIRECTIONS)
    if unknown:
        raise TelemetryError(f"unknown hardness metrics {sorted(unknown)}")
    normalized, degenerate = {}, {}
    for name, values in raw_scores.items():
        norm, degen = _normalize(values, DIRECTIONS[name])
        normalized[name] = norm
        degenerate[name] = degen
    comp = np.mean(np.stack(list(normalized.values())), axis=0)
    return HardnessProfile(
        raw={k: np.asarray(v, dtype=np.float64) for k, v in raw_scores.items()},
        normalized=normalized,
        composite=comp,
        directions={k: DIRECTIONS[k] for k in raw_scores},
        degenerate=degenerate,
    )


def profile_from_run(run, k_depth=25) -> HardnessProfile:
    """Compute every hardness metric the run's telemetry supports."""
    correctness = run.correctness()
    raw = {
        "learning_speed": learning_speed(correctness),
        "forgetting": forgetting_score(correctness).astype(np.float64),
        "aum": aum(run.logits, run.labels),
        "el2n": el2n(run.logits, run.labels),
    }
    if run.grad_magnitudes is not None:
        raw["vog"] = vog(run.grad_magnitudes)
    if run.features:
        ordered = [run.features[i] for i in sorted(run.features)]
        raw["prediction_depth"] = prediction_depth(
            ordered, run.labels, run.num_classes, k=k_depth
        ).astype(np.float64)
        raw["prototypicality"] = prototypicality(ordered[-1], run.labels)
    return composite(raw)
