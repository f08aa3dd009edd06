"""Shared class-conditional Gaussian fitting (means, shrunk covariances)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

SHRINKAGE = 0.05
RIDGE = 1e-6


def shrink_covariance(cov, shrinkage=SHRINKAGE, ridge=RIDGE):
    """(1-l)*Cov + l*diag(Cov) plus an epsilon ridge, for invertibility."""
    cov = np.asarray(cov, dtype=np.float64)
    out = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    out[np.diag_indices_from(out)] += ridge
    return out


@dataclass(frozen=True)
class ClassGaussians:
    means: np.ndarray          # (C, n)
    shared_cov: np.ndarray     # (n, n), pooled within-class, shrunk
    class_covs: np.ndarray     # (C, n, n), per-class, shrunk
    shared_prec: np.ndarray    # inverse of shared_cov
    classes: np.ndarray        # class ids present in the fit


def fit_class_gaussians(features, labels, shrinkage=SHRINKAGE, ridge=RIDGE) -> ClassGaussians:
    """Class means plus pooled and per-class covariances with shrinkage."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    n = x.shape[1]
    means = np.zeros((len(classes), n))
    class_covs = np.zeros((len(classes), n, n))
    pooled = np.zeros((n, n))
    for i, c in enumerate(classes):
        xc = x[y == c]
        means[i] = xc.mean(axis=0)
        centered = xc - means[i]
        scatter = centered.T @ centered
        pooled += scatter
        class_covs[i] = shrink_covariance(scatter / max(len(xc), 1), shrinkage, ridge)
    shared = shrink_covariance(pooled / len(x), shrinkage, ridge)
    try:
        prec = np.linalg.inv(shared)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError(f"shared covariance singular despite shrinkage: {exc}") from exc
    return ClassGaussians(
        means=means, shared_cov=shared, class_covs=class_covs, shared_prec=prec,
        classes=classes,
    )


def mahalanobis_to_means(features, fit: ClassGaussians):
    """(N, C) Mahalanobis distances to every class mean under the shared covariance."""
    x = np.asarray(features, dtype=np.float64)
    out = np.empty((x.shape[0], len(fit.classes)))
    for i in range(len(fit.classes)):
        d = x - fit.means[i]
        out[:, i] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", d, fit.shared_prec, d), 0.0))
    return out


def class_log_likelihoods(features, fit: ClassGaussians):
    """(N, C) log densities under each per-class Gaussian."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[1]
    out = np.empty((x.shape[0], len(fit.classes)))
    for i in range(len(fit.classes)):
        cov = fit.class_covs[i]
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise DegenerateInputError(f"class {fit.classes[i]} covariance not positive definite")
        prec = np.linalg.inv(cov)
        d = x - fit.means[i]
        quad = np.einsum("ij,jk,ik->i", d, prec, d)
        out[:, i] = -0.5 * (quad + logdet + n * np.log(2.0 * np.pi))
    return out
