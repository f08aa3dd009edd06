"""Cue manipulations and the Jensen-Shannon sensitivity profile.

Two manipulation axes:

* spatial frequency: seven octave bands centered at 1.75, 3.5, 7, 14, 28, 56
  and 112 cycles/image, suppressed in the 2-D Fourier domain;
* human-visual-system cues: shape (grid shuffle), texture (Gaussian blur) and
  color (per-channel jitter), each at severities alpha = 1..5.

Everything is deterministic given (image, parameters, seed). RNG streams are
split per (manipulation, sample) from the master seed, so applying
manipulations in any order or in parallel never changes a result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, TelemetryError

FREQ_CENTERS = (1.75, 3.5, 7.0, 14.0, 28.0, 56.0, 112.0)
HVS_CUES = ("shape", "texture", "color")
SEVERITIES = (1, 2, 3, 4, 5)

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class FrequencyBand:
    """One octave band [center/sqrt(2), center*sqrt(2)) in cycles/image."""

    center: float

    @property
    def lo(self):
        return self.center / _SQRT2

    @property
    def hi(self):
        return self.center * _SQRT2


def octave_bands():
    """The seven canonical bands; they tile [1.2374.., 158.39..) without overlap."""
    return tuple(FrequencyBand(c) for c in FREQ_CENTERS)


def manipulation_names():
    """Canonical ordered names of all 22 manipulations."""
    names = [f"freq_{c:g}" for c in FREQ_CENTERS]
    names += [f"{cue}_a{a}" for cue in HVS_CUES for a in SEVERITIES]
    return tuple(names)


def _stream(seed, *key):
    """Independent, order-insensitive RNG stream for a (manipulation, sample) pair."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def radial_frequency(h, w):
    """(h, w) grid of radial frequencies in cycles/image for an FFT layout."""
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    return np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)


def suppress_band(image, band: FrequencyBand):
    """Zero all Fourier coefficients with lo <= r < hi; DC is never masked.

    ``image`` is (H, W) or (H, W, C); tiles must be square. Returns the real
    part of the inverse transform as float64.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if img.ndim != 3 or img.shape[0] != img.shape[1]:
        raise TelemetryError(f"suppress_band needs a square image, got shape {np.shape(image)}")
    r = radial_frequency(img.shape[0], img.shape[1])
    keep = ~((r >= band.lo) & (r < band.hi))
    keep[0, 0] = True  # DC carries brightness, not frequency content
    spec = np.fft.fft2(img, axes=(0, 1)) * keep[:, :, None]
    out = np.fft.ifft2(spec, axes=(0, 1)).real
    return out[..., 0] if squeeze else out


def _cell_edges(n, cells):
    """Split [0, n) into ``cells`` chunks of size ceil(n/cells), last one ragged."""
    size = -(-n // cells)
    edges = [min(i * size, n) for i in range(cells + 1)]
    return edges


def grid_shuffle(image, alpha, seed, sample_index=0):
    """Shape cue removal: permute the (alpha+1) x (alpha+1) grid cells.

    Cells are permuted by a seeded uniform permutation; when the image size is
    not divisible the ragged edge cells differ in shape, and the permutation is
    applied within groups of identically shaped cells so the pixel multiset is
    preserved exactly.
    """
    img = np.asarray(image)
    cells = int(alpha) + 1
    h, w = img.shape[0], img.shape[1]
    ye = _cell_edges(h, cells)
    xe = _cell_edges(w, cells)
    slots = [
        (ye[i], ye[i + 1], xe[j], xe[j + 1])
        for i in range(cells)
        for j in range(cells)
        if ye[i + 1] > ye[i] and xe[j + 1] > xe[j]
    ]
    rng = _stream(seed, _manip_index(f"shape_a{int(alpha)}"), sample_index)
    perm = rng.permutation(len(slots))
    # project the uniform permutation onto shape-consistent moves: within each
    # group of same-shaped slots, order sources by their permuted rank
    groups = {}
    for k, (y0, y1, x0, x1) in enumerate(slots):
        groups.setdefault((y1 - y0, x1 - x0), []).append(k)
    out = np.array(img, copy=True)
    for members in groups.values():
        order = sorted(members, key=lambda k: perm[k])
        for dst, src in zip(members, order):
            dy0, dy1, dx0, dx1 = slots[dst]
            sy0, sy1, sx0, sx1 = slots[src]
            out[dy0:dy1, dx0:dx1] = img[sy0:sy1, sx0:sx1]
    return out


def gaussian_kernel_1d(sigma):
    """Normalized Gaussian taps truncated at 3*sigma."""
    radius = int(np.floor(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(img, kernel, axis):
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return img
    pad = [(0, 0)] * img.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    sl = [slice(None)] * img.ndim
    for i, kv in enumerate(kernel):
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


def gaussian_blur(image, alpha, seed, sample_index=0, sigma=None):
    """Texture cue removal: separable Gaussian blur with reflect padding.

    sigma is drawn uniformly from the open interval (0.5*alpha, 0.5*(alpha+1))
    per image unless pinned explicitly (test hook). The kernel sums to one, so
    channel means are preserved up to edge effects.
    """
    img = np.asarray(image, dtype=np.float64)
    if sigma is None:
        rng = _stream(seed, _manip_index(f"texture_a{int(alpha)}"), sample_index)
        lo, hi = 0.5 * alpha, 0.5 * (alpha + 1)
        sigma = lo + (hi - lo) * rng.random()
    kernel = gaussian_kernel_1d(float(sigma))
    out = _convolve_axis(img, kernel, axis=0)
    out = _convolve_axis(out, kernel, axis=1)
    return out


def channel_jitter(image, alpha, seed, sample_index=0, offsets=None):
    """Color cue removal: one scalar offset per channel from [-0.1a, 0.1a].

    The offset is global per channel (not per pixel), so all spatial gradients
    are untouched; only the channel statistics shift.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if offsets is None:
        rng = _stream(seed, _manip_index(f"color_a{int(alpha)}"), sample_index)
        lim = 0.1 * alpha
        offsets = rng.uniform(-lim, lim, size=img.shape[2])
    out = img + np.asarray(offsets, dtype=np.float64)[None, None, :]
    return out[..., 0] if squeeze else out


def _manip_index(name):
    return manipulation_names().index(name)


def apply_manipulation(image, name, seed, sample_index=0):
    """Apply one named manipulation with its dedicated RNG stream."""
    if name.startswith("freq_"):
        center = float(name[5:])
        return suppress_band(image, FrequencyBand(center))
    cue, _, sev = name.partition("_a")
    alpha = int(sev)
    if cue == "shape":
        return grid_shuffle(image, alpha, seed, sample_index)
    if cue == "texture":
        return gaussian_blur(image, alpha, seed, sample_index)
    if cue == "color":
        return channel_jitter(image, alpha, seed, sample_index)
    raise ValueError(f"unknown manipulation '{name}'")


def _check_distribution(p, name):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-6:
        raise TelemetryError(f"{name} is not a probability vector (sum {p.sum():.9f})")
    return np.clip(p, 0.0, None)


def js_divergence(p, q):
    """Jensen-Shannon divergence, natural log; bounded by ln 2.

    0 * log 0 is taken as 0. Inputs must sum to one within 1e-6.
    """
    p = _check_distribution(p, "P")
    q = _check_distribution(q, "Q")
    if p.shape != q.shape:
        raise TelemetryError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_pm = np.where(p > 0, p * (np.log(p) - np.log(m)), 0.0)
        kl_qm = np.where(q > 0, q * (np.log(q) - np.log(m)), 0.0)
    return float(0.5 * kl_pm.sum() + 0.5 * kl_qm.sum())


def js_divergence_rows(p, q):
    """Row-wise JS divergence between two row-stochastic (N, C) matrices."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise TelemetryError(f"softmax shapes differ: {p.shape} vs {q.shape}")
    for name, mat in (("clean", p), ("perturbed", q)):
        if np.any(mat < -1e-12) or np.any(np.abs(mat.sum(axis=1) - 1.0) > 1e-6):
            raise TelemetryError(f"{name} softmax matrix is not row-stochastic")
    p = np.clip(p, 0.0, None)
    q = np.clip(q, 0.0, None)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_pm = np.where(p > 0, p * (np.log(p) - np.log(m)), 0.0).sum(axis=1)
        kl_qm = np.where(q > 0, q * (np.log(q) - np.log(m)), 0.0).sum(axis=1)
    return 0.5 * kl_pm + 0.5 * kl_qm


@dataclass(frozen=True)
class SensitivityProfile:
    """Mean divergences and normalized shares along both manipulation axes."""

    mean_djs: dict                 # manipulation name -> mean D_JS over samples
    frequency_shares: dict         # "freq_*" -> share of the frequency axis
    hvs_totals: dict               # cue -> sum of mean D_JS over severities
    hvs_shares: dict               # cue -> share of the HVS axis
    frequency_degenerate: bool
    hvs_degenerate: bool


def _shares(values):
    total = sum(values.values())
    if total <= 0.0:
        return {k: 1.0 / len(values) for k in values}, True
    return {k: v / total for k, v in values.items()}, False


def sensitivity_profile(softmax_clean, softmax_perturbed) -> SensitivityProfile:
    """Mean D_JS per manipulation, with shares normalized within each axis.

    ``softmax_perturbed`` maps manipulation names (any subset of
    ``manipulation_names()``) to (N, C) softmax matrices. HVS sensitivity is
    the sum over the five severities of each cue. A zero-total axis yields
    uniform shares plus a degenerate flag instead of NaNs.
    """
    clean = np.asarray(softmax_clean, dtype=np.float64)
    mean_djs = {}
    for name in manipulation_names():
        if name not in softmax_perturbed:
            continue
        mean_djs[name] = float(js_divergence_rows(clean, softmax_perturbed[name]).mean())
    unknown = set(softmax_perturbed) - set(manipulation_names())
    if unknown:
        raise TelemetryError(f"unknown manipulation names {sorted(unknown)}")

    freq = {n: v for n, v in mean_djs.items() if n.startswith("freq_")}
    hvs_totals = {}
    for cue in HVS_CUES:
        sev = [v for n, v in mean_djs.items() if n.startswith(f"{cue}_a")]
        if sev:
            hvs_totals[cue] = float(sum(sev))
    freq_shares, freq_deg = _shares(freq) if freq else ({}, False)
    hvs_shares, hvs_deg = _shares(hvs_totals) if hvs_totals else ({}, False)
    return SensitivityProfile(
        mean_djs=mean_djs,
        frequency_shares=freq_shares,
        hvs_totals=hvs_totals,
        hvs_shares=hvs_shares,
        frequency_degenerate=freq_deg,
        hvs_degenerate=hvs_deg,
    )
