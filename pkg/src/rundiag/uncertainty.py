"""Calibration and single-pass epistemic-uncertainty estimators.

Calibration is measured with a kernel-smoothed calibration error: the
correctness-minus-confidence residual is smoothed with a Gaussian kernel over
the confidence axis (observations mirrored at 0 and 1 to kill boundary bias)
and the mean absolute smoothed residual is taken over the confidence
distribution. The "auto" bandwidth solves the fixed point smece(sigma) = sigma
by bisection.

Nine deterministic epistemic-uncertainty estimators score each sample from a
single forward pass's features/logits against statistics fitted on the
training fold. Each score carries the direction in which epistemic
uncertainty increases (+1: larger score means more uncertain).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .errors import DegenerateInputError, InsufficientDataError, TelemetryError
from .gaussians import ClassGaussians, class_log_likelihoods, fit_class_gaussians, mahalanobis_to_means

ASH_KEEP_FRACTION = 0.35
EU_NEIGHBORS = 10

_BINS_PER_UNIT = 2048  # kernel regression grid resolution


def _validate_calibration(confidence, correctness):
    p = np.asarray(confidence, dtype=np.float64)
    y = np.asarray(correctness, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise TelemetryError(f"confidence {p.shape} and correctness {y.shape} must be equal 1-D")
    if p.shape[0] < 10:
        raise InsufficientDataError(f"calibration needs at least 10 samples, got {p.shape[0]}")
    if np.any((p < 0) | (p > 1)):
        raise TelemetryError("confidences must lie in [0, 1]")
    return p, y


class _SmeceGrid:
    """Binned residuals on the mirrored confidence domain [-1, 2].

    The Gaussian smoothing is applied in the Fourier domain with the kernel's
    analytic spectrum, so one bandwidth evaluation costs two inverse FFTs
    regardless of sigma; the bisection for the auto bandwidth stays cheap.
    """

    def __init__(self, p, y):
        width = 1.0 / _BINS_PER_UNIT
        nbins = 3 * _BINS_PER_UNIT
        resid = y - p
        refl_x = np.concatenate([-p, p, 2.0 - p])
        refl_r = np.concatenate([resid, resid, resid])
        idx = np.clip(((refl_x + 1.0) / width).astype(np.int64), 0, nbins - 1)
        num = np.bincount(idx, weights=refl_r, minlength=nbins)
        den = np.bincount(idx, minlength=nbins).astype(np.float64)
        central = np.clip(((p + 1.0) / width).astype(np.int64), 0, nbins - 1)
        weights = np.bincount(central, minlength=nbins).astype(np.float64)
        self.nbins = nbins
        self.width = width
        self.n = p.shape[0]
        self.live = weights > 0
        self.weights = weights[self.live]
        # zero-pad to kill circular wraparound of the widest kernel (4 sigma
        # of sigma=0.5 is 2 units; one extra domain width is plenty)
        self.pad = 1 << int(np.ceil(np.log2(2 * nbins)))
        self.num_ft = np.fft.rfft(num, self.pad)
        self.den_ft = np.fft.rfft(den, self.pad)
        self.freq = np.fft.rfftfreq(self.pad)  # cycles per bin

    def at(self, sigma):
        s_bins = sigma / self.width
        gauss_ft = np.exp(-2.0 * (np.pi * s_bins * self.freq) ** 2)
        num_s = np.fft.irfft(self.num_ft * gauss_ft, self.pad)[: self.nbins]
        den_s = np.fft.irfft(self.den_ft * gauss_ft, self.pad)[: self.nbins]
        smooth = num_s[self.live] / den_s[self.live]
        return float((self.weights * np.abs(smooth)).sum() / self.n)


def smooth_ece(confidence, correctness, bandwidth="auto"):
    """Kernel-smoothed expected calibration error in [0, 1].

    ``bandwidth`` is a kernel sigma in confidence units, or "auto" to solve
    the fixed point smece(sigma) = sigma by bisection on [1e-4, 0.5] (falling
    back to sigma = 0.05 if the bracket carries no sign change).
    """
    p, y = _validate_calibration(confidence, correctness)
    grid = _SmeceGrid(p, y)
    if bandwidth != "auto":
        return grid.at(float(bandwidth))
    lo, hi = 1e-4, 0.5
    g_lo = grid.at(lo) - lo
    g_hi = grid.at(hi) - hi
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    if np.sign(g_lo) == np.sign(g_hi):
        return grid.at(0.05)
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        g_mid = grid.at(mid) - mid
        if g_mid == 0.0:
            return mid
        if np.sign(g_mid) == np.sign(g_lo):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
        if hi - lo < 1e-10:
            break
    sigma = 0.5 * (lo + hi)
    return grid.at(sigma)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def energy(logits):
    """Energy score -logsumexp(z); shifts by exactly -c under z -> z + c."""
    return -logsumexp(np.asarray(logits, dtype=np.float64), axis=-1)


def auroc(scores, positives):
    """P(random positive outscores random negative), ties counted half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUROC needs both positive and negative samples")
    ranks = rankdata(s)  # average rank on ties = half credit
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, positives):
    """Area under the precision-recall curve by step integration over thresholds."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise DegenerateInputError("AUPRC needs at least one positive sample")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = pos[order].astype(np.float64)
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(1.0 - pos_sorted)
    # collapse tied scores: only the last index of each tie group is a threshold
    last_of_group = np.flatnonzero(np.append(np.diff(s_sorted) != 0, True))
    tp = tp[last_of_group]
    fp = fp[last_of_group]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def classification_metrics(logits, labels, positive_class=1):
    """Accuracy, AUROC and AUPRC of one checkpoint's logits.

    The ranking score for AUROC/AUPRC is the softmax probability of
    ``positive_class`` (the "tumorous" class by convention).
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise TelemetryError(f"logits {z.shape} inconsistent with {y.shape[0]} labels")
    pred = np.argmax(z, axis=1)
    accuracy = float(np.mean(pred == y))
    score = softmax(z, axis=1)[:, positive_class]
    positives = y == positive_class
    return {
        "accuracy": accuracy,
        "auroc": auroc(score, positives),
        "auprc": auprc(score, positives),
    }


# --------------------------------------------------------------------------
# epistemic uncertainty
# --------------------------------------------------------------------------

ESTIMATOR_DIRECTIONS = {
    "ash_energy": +1,
    "dml": -1,
    "rp_gradnorm": -1,
    "mahalanobis": +1,
    "gda": -1,
    "knn": +1,
    "cosine": -1,
    "nnguide": +1,
    "vim": +1,
}


@dataclass(frozen=True)
class EUScore:
    name: str
    values: np.ndarray
    direction: int  # +1: larger value = more epistemic uncertainty


@dataclass
class TrainStats:
    """Training-fold statistics shared by all estimators (fitted once)."""

    gaussians: ClassGaussians
    class_prior: np.ndarray
    train_mean: np.ndarray
    principal: np.ndarray            # (n, m) orthonormal columns, ~95% variance
    norm_train_features: np.ndarray  # unit-norm rows
    head_weights: np.ndarray | None = None
    head_bias: np.ndarray | None = None
    vim_alpha: float | None = None
    neighbors: int = EU_NEIGHBORS
    notes: dict = field(default_factory=dict)


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _residual_norm(features, stats: TrainStats):
    centered = np.asarray(features, dtype=np.float64) - stats.train_mean
    in_span = centered @ stats.principal
    res = centered - in_span @ stats.principal.T
    return np.linalg.norm(res, axis=1)


def fit_train_stats(
    features,
    labels,
    class_prior=None,
    head_weights=None,
    head_bias=None,
    variance_threshold=0.95,
    neighbors=EU_NEIGHBORS,
) -> TrainStats:
    """Fit every statistic the estimators need on the training fold only."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    gaussians = fit_class_gaussians(x, y)
    if class_prior is None:
        class_prior = np.bincount(y, minlength=len(gaussians.classes)) / len(y)
    class_prior = np.asarray(class_prior, dtype=np.float64)

    mean = x.mean(axis=0)
    centered = x - mean
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    ev = sv**2
    total = ev.sum()
    if total <= 0.0:
        m = 1
    else:
        m = int(np.searchsorted(np.cumsum(ev) / total, variance_threshold) + 1)
    principal = vt[:m].T

    stats = TrainStats(
        gaussians=gaussians,
        class_prior=class_prior,
        train_mean=mean,
        principal=principal,
        norm_train_features=_normalize_rows(x),
        head_weights=None if head_weights is None else np.asarray(head_weights, np.float64),
        head_bias=None if head_bias is None else np.asarray(head_bias, np.float64),
        neighbors=neighbors,
    )
    if stats.head_weights is not None:
        train_logits = x @ stats.head_weights.T + (
            0.0 if stats.head_bias is None else stats.head_bias
        )
        mean_max_logit = float(train_logits.max(axis=1).mean())
        mean_residual = float(_residual_norm(x, stats).mean())
        # if the principal subspace captures everything, ViM degrades to energy
        stats.vim_alpha = mean_max_logit / mean_residual if mean_residual > 1e-12 else 0.0
    return stats


def ash_b(features, keep_fraction=ASH_KEEP_FRACTION):
    """ASH-B reshaping: top-|.| activations set to sum/kept, the rest zeroed."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[1]
    m = max(1, int(round(keep_fraction * n)))
    out = np.zeros_like(x)
    order = np.argsort(-np.abs(x), axis=1, kind="stable")[:, :m]
    fill = x.sum(axis=1) / m
    np.put_along_axis(out, order, fill[:, None], axis=1)
    return out


def _knn_cosine(features, stats: TrainStats):
    """Mean distance and mean cosine to the k nearest normalized train features."""
    q = _normalize_rows(np.asarray(features, dtype=np.float64))
    t = stats.norm_train_features
    k = min(stats.neighbors, t.shape[0])
    sims = q @ t.T
    # on the unit sphere the k smallest distances are the k largest cosines
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top_sims = np.take_along_axis(sims, top, axis=1)
    dists = np.sqrt(np.maximum(2.0 - 2.0 * top_sims, 0.0))
    return dists.mean(axis=1), top_sims.mean(axis=1)


def eu_scores(features, logits, stats: TrainStats):
    """All estimators the telemetry supports; returns (scores, skipped).

    ``skipped`` maps estimator names to one-line reasons (missing head
    weights, singular covariance, ...). Scores are deterministic functions of
    (features, logits, stats).
    """
    x = np.asarray(features, dtype=np.float64)
    z = np.asarray(logits, dtype=np.float64)
    if x.shape[0] != z.shape[0]:
        raise TelemetryError(f"feature rows {x.shape[0]} != logit rows {z.shape[0]}")
    scores = []
    skipped = {}

    def emit(name, values):
        scores.append(EUScore(name, np.asarray(values, np.float64), ESTIMATOR_DIRECTIONS[name]))

    has_head = stats.head_weights is not None
    head_reason = "head weights/bias not present in telemetry"

    if has_head:
        bias = 0.0 if stats.head_bias is None else stats.head_bias
        shaped_logits = ash_b(x) @ stats.head_weights.T + bias
        emit("ash_energy", energy(shaped_logits))
        w_norm = _normalize_rows(stats.head_weights)
        emit("dml", (_normalize_rows(x) @ w_norm.T).max(axis=1))
        p = softmax(z, axis=1)
        emit("rp_gradnorm", np.abs(p - stats.class_prior).sum(axis=1) * np.abs(x).sum(axis=1))
    else:
        skipped["ash_energy"] = head_reason
        skipped["dml"] = head_reason
        skipped["rp_gradnorm"] = head_reason

    emit("mahalanobis", mahalanobis_to_means(x, stats.gaussians).min(axis=1))
    try:
        emit("gda", class_log_likelihoods(x, stats.gaussians).max(axis=1))
    except DegenerateInputError as exc:
        skipped["gda"] = str(exc)

    knn_dist, cos_sim = _knn_cosine(x, stats)
    emit("knn", knn_dist)
    emit("cosine", cos_sim)
    emit("nnguide", energy(z) * cos_sim)

    if has_head:
        emit("vim", stats.vim_alpha * _residual_norm(x, stats) + energy(z))
    else:
        skipped["vim"] = head_reason
    return scores, skipped


def abstention_curve(eu: EUScore, confidence, correctness, q_max=90, bandwidth="auto"):
    """ECE_q / ECE_0 after rejecting the top q% highest-EU samples, q = 0..q_max."""
    p, y = _validate_calibration(confidence, correctness)
    n = p.shape[0]
    oriented = eu.direction * np.asarray(eu.values, dtype=np.float64)
    if oriented.shape[0] != n:
        raise TelemetryError(f"EU scores {oriented.shape[0]} != samples {n}")
    ece0 = smooth_ece(p, y, bandwidth)
    if ece0 < 1e-6:
        raise DegenerateInputError(f"base calibration error {ece0:.2e} below 1e-6")
    # highest EU first; ties resolved by sample id for determinism
    order = np.lexsort((np.arange(n), -oriented))
    ratios = np.empty(q_max + 1)
    ratios[0] = 1.0
    for q in range(1, q_max + 1):
        drop = int(np.floor(q / 100.0 * n))
        keep = np.sort(order[drop:]) if drop else np.arange(n)
        ratios[q] = smooth_ece(p[keep], y[keep], bandwidth) / ece0
    return ratios


def alignment_score(eu: EUScore, confidence, correctness, q_max=90, bandwidth="auto"):
    """Trapezoidal mean of ECE_q / ECE_0 over the rejection grid.

    1 corresponds to random rejection; below 1 means rejecting high-EU samples
    improves calibration. The grid stops at ``q_max`` (default 90) because the
    calibration error is undefined on near-empty retained sets.
    """
    ratios = abstention_curve(eu, confidence, correctness, q_max, bandwidth)
    return float(np.trapezoid(ratios, dx=1.0) / q_max)
