"""Saliency maps from recorded activations/gradients, and mask concordance.

The map builder uses the closed-form higher-order weighting that holds when
gradients are taken of the exponential of the class score, so the telemetry
only needs first-order gradient maps: position weights are
G^2 / (2 G^2 + sum(A) * G^3) with 0/0 := 0. Maps are bilinearly upsampled to
the tile size and min-max normalized to [0, 1]; an all-zero response is
flagged flat and contributes zero concordance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TelemetryError


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray      # (H, W) in [0, 1]
    flat: bool              # True when the raw map had no positive response


def bilinear_resize(image, out_h, out_w):
    """Plain bilinear resize with half-pixel centers (align_corners=False)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def gradcam_pp(activations, gradients, out_size) -> SaliencyMap:
    """Closed-form Grad-CAM++ map from (K, h, w) activation and gradient maps."""
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if a.shape != g.shape or a.ndim != 3:
        raise TelemetryError(
            f"activations {a.shape} and gradients {np.shape(gradients)} must be equal (K,h,w)"
        )
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
        raise TelemetryError("non-finite activation/gradient maps")
    g2 = g * g
    denom = 2.0 * g2 + a.sum(axis=(1, 2))[:, None, None] * (g2 * g)
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0)
    weights = (alpha * np.maximum(g, 0.0)).sum(axis=(1, 2))
    raw = np.maximum((weights[:, None, None] * a).sum(axis=0), 0.0)
    up = bilinear_resize(raw, out_size[0], out_size[1])
    lo, hi = up.min(), up.max()
    if hi - lo <= 0.0:
        return SaliencyMap(values=np.zeros(out_size), flat=True)
    return SaliencyMap(values=(up - lo) / (hi - lo), flat=False)


def threshold_top_q(values, q):
    """Boolean mask of pixels strictly above the rank-based q-th percentile.

    q = 100 keeps the argmax pixel set instead (strictly-above would be empty).
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if q >= 100:
        return (values == flat.max()) & np.isfinite(values)
    m = flat.shape[0]
    rank = min(max(int(np.ceil(q / 100.0 * m)), 1), m)
    cut = np.sort(flat, kind="stable")[rank - 1]
    return values > cut


def concordance_score(saliency, mask, q_lo=90, q_hi=100):
    """Fraction of top-percentile thresholds at which saliency touches the mask.

    For each integer q in [q_lo, q_hi] the map is binarized at the top-q%
    values; the per-q indicator is 1 iff any retained pixel lies inside the
    mask. Flat (degenerate) maps score 0. The mask must be nonempty.
    """
    y = np.asarray(mask, dtype=bool)
    if not y.any():
        raise TelemetryError("empty mask: concordance is undefined")
    if isinstance(saliency, SaliencyMap):
        if saliency.flat:
            return 0.0
        values = saliency.values
    else:
        values = np.asarray(saliency, dtype=np.float64)
    if values.shape != y.shape:
        raise TelemetryError(f"saliency {values.shape} and mask {y.shape} shapes differ")
    hits = [bool((threshold_top_q(values, q) & y).any()) for q in range(q_lo, q_hi + 1)]
    return float(np.mean(hits))


def dataset_concordance(maps, masks, labels, positive_class=1, q_lo=90, q_hi=100):
    """Mean concordance over samples of the positive ("tumorous") class."""
    labels = np.asarray(labels)
    scores = {}
    for i in np.flatnonzero(labels == positive_class):
        scores[int(i)] = concordance_score(maps[i], masks[i], q_lo, q_hi)
    if not scores:
        raise TelemetryError(f"no samples of class {positive_class} to score")
    return float(np.mean(list(scores.values()))), scores
