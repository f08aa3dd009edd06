"""Representation and prediction similarity, plus weight-dynamics statistics.

* ``cka``: linear centered kernel alignment with the unbiased HSIC estimator,
  averaged over disjoint seeded minibatches. Invariant to orthogonal
  transformations and isotropic scaling of either representation.
* ``cohens_kappa``: chance-corrected agreement of two correctness patterns.
* ``kernel_total_variation``: anisotropic TV per first-layer kernel.
* ``weight_displacement``: Frobenius distance between consecutive snapshots.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, TelemetryError


def _unbiased_hsic(k, l):
    """Song et al.'s unbiased HSIC_1 for Gram matrices with n >= 4."""
    n = k.shape[0]
    kt = k.copy()
    lt = l.copy()
    np.fill_diagonal(kt, 0.0)
    np.fill_diagonal(lt, 0.0)
    ks = kt.sum()
    ls = lt.sum()
    cross = float((kt * lt).sum())
    row = float(kt.sum(axis=1) @ lt.sum(axis=1))
    return (
        cross + ks * ls / ((n - 1) * (n - 2)) - 2.0 * row / (n - 2)
    ) / (n * (n - 3))


def _batches(n, minibatch, seed):
    if n <= minibatch:
        return [np.arange(n)]
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xCA,)))
    perm = rng.permutation(n)
    out = [perm[i : i + minibatch] for i in range(0, n, minibatch)]
    if len(out[-1]) < 4:  # unbiased HSIC needs >= 4 rows
        out = out[:-1]
    return out


def cka(z_i, z_j, minibatch=256, seed=0):
    """Linear CKA between two (N, n) representations, clamped to [0, 1].

    HSIC terms are averaged over disjoint minibatches of the same seeded
    shuffle (a ragged trailing block under 4 rows is dropped), so the value is
    identical however the caller parallelizes.
    """
    zi = np.asarray(z_i, dtype=np.float64)
    zj = np.asarray(z_j, dtype=np.float64)
    if zi.shape[0] != zj.shape[0]:
        raise TelemetryError(f"sample counts differ: {zi.shape[0]} vs {zj.shape[0]}")
    n = zi.shape[0]
    if n < 4:
        raise TelemetryError(f"cka needs at least 4 samples, got {n}")
    num = kk = ll = 0.0
    for idx in _batches(n, minibatch, seed):
        bi = zi[idx]
        bj = zj[idx]
        gi = bi @ bi.T
        gj = bj @ bj.T
        num += _unbiased_hsic(gi, gj)
        kk += _unbiased_hsic(gi, gi)
        ll += _unbiased_hsic(gj, gj)
    denom = np.sqrt(max(kk, 0.0) * max(ll, 0.0))
    if denom <= 0.0:
        raise DegenerateInputError("zero-variance features: HSIC denominator vanished")
    return float(np.clip(num / denom, 0.0, 1.0))


def intra_cka_matrix(layer_features, minibatch=256, seed=0):
    """Symmetric L x L CKA matrix across layer representations (unit diagonal)."""
    mats = [np.asarray(z, dtype=np.float64) for z in layer_features]
    L = len(mats)
    out = np.eye(L)
    for a in range(L):
        for b in range(a + 1, L):
            out[a, b] = out[b, a] = cka(mats[a], mats[b], minibatch=minibatch, seed=seed)
    return out


def cohens_kappa(correct_i, correct_j):
    """Chance-corrected agreement of two boolean correctness vectors."""
    ci = np.asarray(correct_i, dtype=bool)
    cj = np.asarray(correct_j, dtype=bool)
    if ci.shape != cj.shape:
        raise TelemetryError(f"correctness shapes differ: {ci.shape} vs {cj.shape}")
    p_o = float(np.mean(ci == cj))
    p_i = float(np.mean(ci))
    p_j = float(np.mean(cj))
    p_e = p_i * p_j + (1.0 - p_i) * (1.0 - p_j)
    if p_e >= 1.0:
        raise DegenerateInputError(
            "expected agreement is 1 (both models trivially perfect or trivially wrong)"
        )
    return (p_o - p_e) / (1.0 - p_e)


def kernel_total_variation(kernels):
    """Anisotropic total variation per output kernel.

    ``kernels`` is (K_out, kh, kw, C_in); the TV of one kernel is the sum over
    channels and positions of absolute horizontal plus vertical differences
    (no diagonal terms).
    """
    k = np.asarray(kernels, dtype=np.float64)
    if k.ndim != 4:
        raise TelemetryError(f"kernels must be (K_out, kh, kw, C_in), got {k.shape}")
    horiz = np.abs(np.diff(k, axis=2)).sum(axis=(1, 2, 3))
    vert = np.abs(np.diff(k, axis=1)).sum(axis=(1, 2, 3))
    return horiz + vert


def weight_displacement(snapshots):
    """Frobenius norm of consecutive snapshot differences; (T,) in, (T-1,) out."""
    w = np.asarray(snapshots, dtype=np.float64)
    if w.ndim == 1:
        raise TelemetryError("need at least two snapshots stacked along axis 0")
    if w.shape[0] < 2:
        raise TelemetryError(f"need at least two snapshots, got {w.shape[0]}")
    flat = w.reshape(w.shape[0], -1)
    return np.sqrt(((flat[1:] - flat[:-1]) ** 2).sum(axis=1))
