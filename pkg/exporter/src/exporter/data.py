"""Synthetic two-modality tiles.

Both modalities place a smooth lesion blob on a noisy background; they differ
in *where the class signal lives*:

* ``ir_like`` -- the blob carries a class-specific per-channel intensity
  signature. The spectral cue is directly readable from raw values, largely
  satisfies the task on its own, and generalizes; spatial morphology is
  class-free. Models trained on it are expected to collapse onto channel
  statistics (color / low-spatial-frequency reliance).
* ``rgb_like`` -- channel statistics are matched across classes (and jittered
  per tile so color is useless); the class is the orientation of a fine
  grating inside the blob. Models must read high-spatial-frequency texture.
"""

from __future__ import annotations

import numpy as np

MODALITIES = ("ir_like", "rgb_like")


def _lowpass_noise(rng, tile, cutoff, amplitude):
    """Smooth class-free background texture via Fourier low-pass of white noise."""
    spec = np.fft.fft2(rng.normal(size=(tile, tile)))
    fy = np.fft.fftfreq(tile) * tile
    r = np.sqrt(fy[:, None] ** 2 + fy[None, :] ** 2)
    spec[r > cutoff] = 0.0
    img = np.fft.ifft2(spec).real
    std = img.std()
    return amplitude * img / (std if std > 0 else 1.0)


def _blob(rng, tile):
    cy, cx = rng.integers(tile // 3, 2 * tile // 3, size=2)
    radius = rng.uniform(tile / 5.0, tile / 3.5)
    yy, xx = np.meshgrid(np.arange(tile), np.arange(tile), indexing="ij")
    dist2 = (yy - cy) ** 2 + (xx - cx) ** 2
    profile = np.exp(-dist2 / (2.0 * (radius / 1.5) ** 2))
    mask = dist2 <= radius**2
    return profile, mask


def _spectral_signatures(channels):
    # two distinct, strictly positive channel signatures
    ramp = np.linspace(0.4, 1.3, channels)
    return np.stack([ramp, ramp[::-1]])


def make_dataset(modality, n, tile, channels, seed, grating_freq=None):
    """Images (n, tile, tile, channels), labels, lesion masks."""
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}, got '{modality}'")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    images = np.zeros((n, tile, tile, channels))
    masks = np.zeros((n, tile, tile), dtype=np.uint8)
    signatures = _spectral_signatures(channels)
    if grating_freq is None:
        grating_freq = max(6, int(0.75 * (tile // 2)))  # well into the high bands
    yy, xx = np.meshgrid(np.arange(tile), np.arange(tile), indexing="ij")

    for i in range(n):
        profile, mask = _blob(rng, tile)
        masks[i] = mask
        tile_img = np.zeros((tile, tile, channels))
        for c in range(channels):
            tile_img[:, :, c] += _lowpass_noise(rng, tile, cutoff=3.0, amplitude=0.35)
        tile_img += 0.15 * rng.normal(size=tile_img.shape)  # class-free HSF noise

        if modality == "ir_like":
            tile_img += 1.2 * profile[:, :, None] * signatures[labels[i]][None, None, :]
        else:
            axis = yy if labels[i] == 0 else xx
            phase = rng.uniform(0, 2 * np.pi)
            grating = np.cos(2 * np.pi * grating_freq * axis / tile + phase)
            tile_img += 1.0 * (profile * grating)[:, :, None]
            tile_img += rng.uniform(-0.4, 0.4, size=channels)[None, None, :]  # kill color cue
        images[i] = tile_img
    return images, labels.astype(np.int64), masks
