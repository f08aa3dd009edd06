"""Intrinsic-dimension estimation and per-pixel PCA channel reduction.

Three estimators over a representation cloud:

* ``id_lpca``  -- mean number of local principal components explaining 95% of
  the variance in each point's (up to) 20 nearest neighbors;
* ``id_2nn``   -- Facco's two-nearest-neighbor estimator, least-squares fit
  through the origin of -log(1-F) against log(r2/r1) with the top 10% of
  ratios discarded;
* ``id_mle``   -- Levina-Bickel maximum-likelihood estimator at k=6, averaging
  the per-sample estimates.

All three are invariant to global rotation and uniform scaling of the cloud.
Neighbor search is exact: distances are computed pairwise and sorted stably by
(distance, id), matching an exhaustive oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateInputError, InsufficientDataError, TelemetryError


class NeighborIndex:
    """Exact Euclidean k-NN over a fixed point set; self is never a neighbor."""

    def __init__(self, points, block=1024):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2:
            raise TelemetryError(f"neighbor index needs (N, n) points, got {self.points.shape}")
        self.block = block

    def __len__(self):
        return self.points.shape[0]

    def query(self, k, exclude_self=True):
        """Ordered (ids, distances) of the k nearest neighbors of every point."""
        n = len(self)
        k = min(k, n - 1 if exclude_self else n)
        ids = np.empty((n, k), dtype=np.int64)
        dists = np.empty((n, k), dtype=np.float64)
        for start in range(0, n, self.block):
            stop = min(start + self.block, n)
            d = cdist(self.points[start:stop], self.points)
            if exclude_self:
                d[np.arange(stop - start), np.arange(start, stop)] = np.inf
            order = np.argsort(d, axis=1, kind="stable")[:, :k]
            ids[start:stop] = order
            dists[start:stop] = np.take_along_axis(d, order, axis=1)
        return ids, dists


@dataclass(frozen=True)
class IDEstimate:
    estimator: str
    value: float
    params: dict
    degenerate: bool = False
    excluded: int = 0      # points dropped for coincident neighbors


def id_lpca(features, k=20, var_threshold=0.95) -> IDEstimate:
    """Local-PCA dimension: components needed to reach the variance threshold.

    For each sample, PCA is run on its (up to) k nearest neighbors after
    centering the neighbor patch; the estimate is the mean component count.
    A cloud of identical points has no local variance and reports 0 with a
    degenerate flag.
    """
    x = np.asarray(features, dtype=np.float64)
    index = NeighborIndex(x)
    ids, _ = index.query(min(k, len(index) - 1))
    counts = np.empty(len(index), dtype=np.float64)
    degenerate_everywhere = True
    for i in range(len(index)):
        patch = x[ids[i]]
        patch = patch - patch.mean(axis=0)
        sv = np.linalg.svd(patch, compute_uv=False)
        ev = sv**2
        total = ev.sum()
        if total <= 0.0:
            counts[i] = 0.0
            continue
        degenerate_everywhere = False
        # first component count whose cumulative share reaches the threshold;
        # capped so threshold == 1.0 cannot run past the spectrum on roundoff
        counts[i] = min(int(np.searchsorted(np.cumsum(ev) / total, var_threshold)) + 1, ev.size)
    value = 0.0 if degenerate_everywhere else float(counts.mean())
    return IDEstimate(
        estimator="lpca",
        value=value,
        params={"k": k, "var_threshold": var_threshold},
        degenerate=degenerate_everywhere,
    )


def twonn_fit(mu, discard_fraction=0.10):
    """Slope through the origin of -log(1 - F) vs log(mu).

    ``mu`` are r2/r1 neighbor-distance ratios (or manufactured Pareto draws);
    the empirical CDF uses F_i = i/N and the top ``discard_fraction`` of the
    sorted ratios is excluded from the fit.
    """
    mu = np.sort(np.asarray(mu, dtype=np.float64))
    n = mu.shape[0]
    keep = int(np.floor(n * (1.0 - discard_fraction)))
    if keep < 2:
        raise InsufficientDataError(f"only {keep} usable ratios after discard")
    f = np.arange(1, keep + 1) / n
    x = np.log(mu[:keep])
    y = -np.log(1.0 - f)
    denom = float((x * x).sum())
    if denom <= 0.0:
        raise DegenerateInputError("all neighbor ratios equal 1; no scaling signal")
    return float((x * y).sum() / denom)


def id_2nn(features, discard_fraction=0.10) -> IDEstimate:
    """Facco 2NN estimator. Duplicate points (r1 == 0) are excluded and counted."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 10:
        raise InsufficientDataError(f"id_2nn needs at least 10 points, got {x.shape[0]}")
    _, dists = NeighborIndex(x).query(2)
    r1, r2 = dists[:, 0], dists[:, 1]
    ok = r1 > 0.0
    excluded = int((~ok).sum())
    if ok.sum() < 10:
        raise InsufficientDataError(f"only {int(ok.sum())} distinct points after duplicates")
    value = twonn_fit(r2[ok] / r1[ok], discard_fraction)
    return IDEstimate(
        estimator="2nn",
        value=value,
        params={"discard_fraction": discard_fraction},
        excluded=excluded,
    )


def mle_local_estimates(dists, k):
    """Per-sample Levina-Bickel estimates from a (N, k) neighbor-distance matrix."""
    t = np.asarray(dists, dtype=np.float64)
    tk = t[:, k - 1][:, None]
    logs = np.log(tk / t[:, : k - 1])
    return (k - 1) / logs.sum(axis=1)


def id_mle(features, k=6) -> IDEstimate:
    """Levina-Bickel MLE at k neighbors, averaging the per-sample estimates.

    Samples with a zero distance among their first k neighbors (coincident
    points) are excluded and counted.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] <= k:
        raise InsufficientDataError(f"id_mle with k={k} needs more than {k} points")
    _, dists = NeighborIndex(x).query(k)
    ok = dists[:, 0] > 0.0
    excluded = int((~ok).sum())
    if not ok.any():
        raise DegenerateInputError("all points coincide; distances are zero")
    values = mle_local_estimates(dists[ok], k)
    return IDEstimate(
        estimator="mle", value=float(values.mean()), params={"k": k}, excluded=excluded
    )


@dataclass(frozen=True)
class PCAReduction:
    reduced: np.ndarray            # (M, components), re-standardized
    explained_variance: float      # cumulative fraction captured by the kept components
    components: np.ndarray         # (components, C_img) principal axes
    mean: np.ndarray               # (C_img,) fit mean
    channel_means: np.ndarray      # standardization stats of the projected data
    channel_stds: np.ndarray

    def reconstruct(self):
        """Undo standardization and project back to the original channel space."""
        raw = self.reduced * self.channel_stds + self.channel_means
        return raw @ self.components + self.mean


def pca_channel_reduce(pixels, components=3, fit_mask=None) -> PCAReduction:
    """Channel-wise PCA compression of pixel spectra, then re-standardization.

    ``pixels`` is (M, C_img); the PCA basis is fitted on ``fit_mask`` rows when
    given (e.g. non-background pixels of the training fold) and applied to all
    rows. Reduced channels are Gaussian-standardized; channels with zero
    variance after projection are left centered but unscaled.
    """
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2:
        raise TelemetryError(f"pixel matrix must be (M, C), got {x.shape}")
    fit = x if fit_mask is None else x[np.asarray(fit_mask)]
    if fit.shape[0] <= x.shape[1]:
        raise InsufficientDataError(
            f"need more fit pixels ({fit.shape[0]}) than channels ({x.shape[1]})"
        )
    mean = fit.mean(axis=0)
    centered = fit - mean
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    ev = sv**2
    total = ev.sum()
    if total <= 0.0:
        raise DegenerateInputError("pixel spectra have zero variance")
    comps = vt[:components]
    explained = float(ev[:components].sum() / total)
    proj = (x - mean) @ comps.T
    ch_mean = proj.mean(axis=0)
    ch_std = proj.std(axis=0)
    safe = np.where(ch_std > 0, ch_std, 1.0)
    reduced = (proj - ch_mean) / safe
    return PCAReduction(
        reduced=reduced,
        explained_variance=explained,
        components=comps,
        mean=mean,
        channel_means=ch_mean,
        channel_stds=safe,
    )
