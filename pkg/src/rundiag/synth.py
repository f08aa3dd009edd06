"""Deterministic synthetic fixtures and oracles.

Every generator derives its RNG from the master seed through a fixed
per-generator code (a counter-based split), so adding a new generator never
perturbs existing fixtures, and identical parameters always reproduce
bit-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import perturb
from .errors import TelemetryError
from .telemetry import write_tensor

# stable per-generator stream codes; append only, never renumber
GEN_CODES = {
    "manifold": 1,
    "dynamics": 2,
    "calibrated": 3,
    "spectral": 4,
    "gaussians": 5,
    "bundle": 6,
}


def _rng(seed, generator, *extra):
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(GEN_CODES[generator], *extra))
    )


def gen_manifold(d, D, N, noise=0.0, seed=0):
    """Uniform d-cube rotated into D dimensions by a seeded orthonormal map."""
    if d > D:
        raise TelemetryError(f"intrinsic dim {d} exceeds ambient dim {D}")
    rng = _rng(seed, "manifold")
    u = rng.random((N, d))
    q, _ = np.linalg.qr(rng.normal(size=(D, d)))
    x = u @ q.T
    if noise > 0:
        x = x + noise * rng.normal(size=x.shape)
    return x


def gen_training_dynamics(N, T, learn_times, flip_rate=0.0, seed=0, num_classes=2):
    """Per-checkpoint logits with planted learning times.

    Sample i predicts its label correctly from checkpoint ``learn_times[i]``
    onward (checkpoints numbered 1..T, so learn time 1 means correct from the
    start), with seeded Bernoulli flips at ``flip_rate``; the planted hardness
    ordering is the learn-time ordering. Returns (labels, logits, correctness)
    with logits shaped (T, N, C).
    """
    learn_times = np.asarray(learn_times)
    if learn_times.shape != (N,):
        raise TelemetryError(f"learn_times must have shape ({N},)")
    rng = _rng(seed, "dynamics")
    labels = rng.integers(0, num_classes, size=N)
    correct = np.arange(1, T + 1)[None, :] >= learn_times[:, None]
    if flip_rate > 0:
        flips = rng.random((N, T)) < flip_rate
        correct = correct ^ flips
    base = rng.normal(scale=0.5, size=(T, N, num_classes))
    margins = rng.uniform(0.5, 1.5, size=(T, N))
    logits = base.copy()
    best_other = np.max(
        np.where(
            np.arange(num_classes)[None, None, :] == labels[None, :, None], -np.inf, base
        ),
        axis=2,
    )
    target = np.where(correct.T, best_other + margins, best_other - margins)
    logits[np.arange(T)[:, None], np.arange(N)[None, :], labels[None, :]] = target
    return labels, logits.astype(np.float64), correct


def gen_calibrated_predictor(N, reliability=None, seed=0):
    """Confidences ~ U(0.5, 1) with correctness ~ Bernoulli(reliability(p))."""
    rng = _rng(seed, "calibrated")
    p = rng.uniform(0.5, 1.0, size=N)
    f = np.clip(reliability(p) if reliability is not None else p, 0.0, 1.0)
    correct = rng.random(N) < f
    return p, correct


def band_lattice_point(band: perturb.FrequencyBand, size):
    """Integer FFT lattice frequency inside the band, closest to its center.

    Only one representative per conjugate pair is returned (fy > 0, or fy == 0
    and fx > 0); per-axis Nyquist components are excluded so a cosine placed
    there has exact variance A^2/2.
    """
    half = size // 2
    best = None
    for fy in range(0, half):
        for fx in range(-(half - 1), half):
            if fy == 0 and fx <= 0:
                continue
            r = np.hypot(fy, fx)
            if band.lo <= r < band.hi:
                key = (abs(r - band.center), fy, fx)
                if best is None or key < best[0]:
                    best = (key, (fy, fx))
    if best is None:
        raise TelemetryError(
            f"no lattice frequency inside band centered {band.center} at size {size}"
        )
    return best[1]


def gen_spectral_image(H, W, band_energies, seed=0):
    """Single-channel image with exact per-band Parseval energy.

    ``band_energies`` maps band centers to pixel-variance contributions. Each
    band contributes one seeded random-phase cosine at the in-band lattice
    frequency nearest the band center. Returns (image, placements) where
    placements maps center -> (fy, fx).
    """
    if H != W:
        raise TelemetryError("spectral fixtures are square")
    rng = _rng(seed, "spectral")
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    img = np.zeros((H, W))
    placements = {}
    for center in sorted(band_energies):
        e = band_energies[center]
        fy, fx = band_lattice_point(perturb.FrequencyBand(center), H)
        placements[center] = (fy, fx)
        if e <= 0:
            continue
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img += np.sqrt(2.0 * e) * np.cos(2.0 * np.pi * (fy * yy + fx * xx) / H + phase)
    return img, placements


@dataclass(frozen=True)
class GaussianClasses:
    features: np.ndarray
    labels: np.ndarray
    means: np.ndarray
    ood: np.ndarray
    head_weights: np.ndarray
    head_bias: np.ndarray
    prior: np.ndarray


def gen_gaussian_classes(C, n, separation, N, seed=0, ood_distance=50.0, ood_count=200):
    """Well-separated activation-like Gaussian classes plus a far OOD cluster.

    Class means sit at radius ``ood_distance`` along nonnegative directions in
    a tight cone, pairwise ``separation`` apart; unit isotropic noise. The OOD
    cluster sits at the origin, i.e. at distance ``ood_distance`` (in noise
    sigmas) from every class mean, with small feature norms the way unfamiliar
    inputs present to a rectified network. The returned head implements the
    Bayes rule for unit covariance: W = means, b = -||mean||^2 / 2.
    """
    rng = _rng(seed, "gaussians")
    if separation > np.sqrt(2.0) * ood_distance:
        raise TelemetryError("separation too large for the requested OOD distance")
    u0 = np.abs(rng.normal(size=n))
    u0 /= np.linalg.norm(u0)
    basis, _ = np.linalg.qr(rng.normal(size=(n, C + 1)))
    # orthonormal directions orthogonal to the cone axis
    t = basis - np.outer(u0, u0 @ basis)
    t, _ = np.linalg.qr(t)
    sin_theta = separation / (np.sqrt(2.0) * ood_distance)
    cos_theta = np.sqrt(1.0 - sin_theta**2)
    means = np.stack([ood_distance * (cos_theta * u0 + sin_theta * t[:, c]) for c in range(C)])
    counts = np.full(C, N // C)
    counts[: N % C] += 1
    labels = np.repeat(np.arange(C), counts)
    features = means[labels] + rng.normal(size=(N, n))
    ood = rng.normal(size=(ood_count, n))
    head_w = means.copy()
    head_b = -0.5 * (means**2).sum(axis=1)
    return GaussianClasses(
        features=features,
        labels=labels,
        means=means,
        ood=ood,
        head_weights=head_w,
        head_bias=head_b,
        prior=counts / N,
    )


# --------------------------------------------------------------------------
# full synthetic run bundles (one call exercises every analysis end-to-end)
# --------------------------------------------------------------------------

PRESETS = {
    "smoke": dict(N=120, T=8, H=32, channels=3, layer_dims=(8, 16, 32), ood_count=40),
    "medium": dict(N=600, T=10, H=64, channels=3, layer_dims=(8, 16, 32, 64), ood_count=100),
}


def write_synth_bundle(out_dir, preset="smoke", seed=0, **overrides):
    """Write a complete, self-consistent telemetry bundle plus index files.

    Produces a run manifest with labels, per-checkpoint logits, per-layer
    features, images, masks, weight snapshots, gradient magnitudes,
    activation/gradient maps, first-layer kernels and a classifier head; plus
    a sensitivity scores index and a memorization folds index. Everything is a
    deterministic function of (preset, seed).
    """
    if preset not in PRESETS:
        raise TelemetryError(f"unknown preset '{preset}' (have {sorted(PRESETS)})")
    cfg = dict(PRESETS[preset])
    cfg.update(overrides)
    N, T, H, channels = cfg["N"], cfg["T"], cfg["H"], cfg["channels"]
    layer_dims = tuple(cfg["layer_dims"])
    rng = _rng(seed, "bundle")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # training dynamics: learn times spread over checkpoints, a slow tail
    learn_times = rng.integers(1, T + 3, size=N)
    labels, logits, _ = gen_training_dynamics(
        N, T, learn_times, flip_rate=0.05, seed=seed, num_classes=2
    )

    # per-layer features: separation grows with depth
    feature_files = {}
    last_gauss = None
    for li, dim in enumerate(layer_dims, start=1):
        gauss = gen_gaussian_classes(
            2, dim, separation=2.0 + 2.0 * li, N=N, seed=seed + li,
            ood_count=cfg["ood_count"],
        )
        # keep sample->class assignment aligned with the trace labels
        feats = gauss.means[labels] + _rng(seed, "bundle", li).normal(size=(N, dim))
        write_tensor(out / f"features_l{li}.spt", feats)
        feature_files[str(li)] = f"features_l{li}.spt"
        last_gauss = gauss

    # images: class-dependent channel offsets + low/high frequency content
    images = np.zeros((N, H, H, channels), dtype=np.float64)
    for i in range(N):
        for c in range(channels):
            img, _ = gen_spectral_image(
                H, H, {3.5: 0.5, 28.0: 0.25}, seed=seed + 17 * i + 3 * c
            )
            images[i, :, :, c] = img + (0.5 if labels[i] == 1 else -0.5) * (c + 1) / channels
    images += 0.05 * rng.normal(size=images.shape)

    # disk masks; activation/gradient maps concentrated on the disk
    hh = max(H // 4, 4)
    masks = np.zeros((N, H, H), dtype=np.uint8)
    K = 4
    acts = np.zeros((N, K, hh, hh))
    grads = np.zeros((N, K, hh, hh))
    yy, xx = np.meshgrid(np.arange(H), np.arange(H), indexing="ij")
    yys, xxs = np.meshgrid(np.arange(hh), np.arange(hh), indexing="ij")
    for i in range(N):
        cy, cx = rng.integers(H // 4, 3 * H // 4, size=2)
        radius = H // 6
        masks[i] = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.uint8)
        sy, sx = cy * hh / H, cx * hh / H
        blob = np.exp(-(((yys - sy) ** 2 + (xxs - sx) ** 2) / (2.0 * (hh / 6) ** 2)))
        for k in range(K):
            acts[i, k] = blob * rng.uniform(0.5, 1.5)
            grads[i, k] = blob * rng.uniform(0.2, 1.0) + 0.01 * rng.normal(size=blob.shape)

    # weight snapshots: decaying random walk; first-layer kernels from the walk
    P = 64
    steps = rng.normal(size=(T, P)) * (1.0 / np.arange(1, T + 1))[:, None]
    weights = np.cumsum(steps, axis=0)
    kernels = rng.normal(size=(6, 3, 3, channels))

    grad_mag = np.abs(rng.normal(size=(N, T))) * (1.0 + learn_times[:, None] / T)

    write_tensor(out / "labels.spt", labels.astype(np.int64))
    logit_files = []
    for t in range(T):
        name = f"logits_t{t}.spt"
        write_tensor(out / name, logits[t])
        logit_files.append(name)
    weight_files = []
    for t in range(T):
        name = f"weights_t{t}.spt"
        write_tensor(out / name, weights[t])
        weight_files.append(name)
    write_tensor(out / "images.spt", images)
    write_tensor(out / "masks.spt", masks)
    write_tensor(out / "grad_magnitudes.spt", grad_mag)
    write_tensor(out / "activations.spt", acts)
    write_tensor(out / "gradients.spt", grads)
    write_tensor(out / "kernels.spt", kernels)
    write_tensor(out / "head_weights.spt", last_gauss.head_weights)
    write_tensor(out / "head_bias.spt", last_gauss.head_bias)

    manifest = {
        "run_id": f"synth-{preset}-{seed}",
        "num_samples": int(N),
        "num_classes": 2,
        "num_checkpoints": int(T),
        "checkpoint_stride": 100,
        "labels": "labels.spt",
        "logits": logit_files,
        "features": feature_files,
        "class_prior": [c / N for c in np.bincount(labels, minlength=2)],
        "images": "images.spt",
        "weights": weight_files,
        "grad_magnitudes": "grad_magnitudes.spt",
        "activations": "activations.spt",
        "gradients": "gradients.spt",
        "masks": "masks.spt",
        "kernels": "kernels.spt",
        "head_weights": "head_weights.spt",
        "head_bias": "head_bias.spt",
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))

    # sensitivity scores: clean softmax from the final checkpoint; each
    # manipulation mixes toward uniform at its own planted rate
    clean = np.exp(logits[-1]) / np.exp(logits[-1]).sum(axis=1, keepdims=True)
    write_tensor(out / "softmax_clean.spt", clean)
    scores = {"clean": "softmax_clean.spt", "perturbed": {}}
    for mi, name in enumerate(perturb.manipulation_names()):
        rate = 0.05 + 0.9 * mi / len(perturb.manipulation_names())
        mixed = (1.0 - rate) * clean + rate * 0.5
        fname = f"softmax_{name}.spt"
        write_tensor(out / fname, mixed)
        scores["perturbed"][name] = fname
    (out / "scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True))

    # memorization folds: planted in/out gap on the hardest (late-learning) ids
    hard = np.argsort(-learn_times, kind="stable")[: max(1, int(np.ceil(0.05 * N)))]
    folds = []
    for fold in range(3):
        frng = _rng(seed, "bundle", 1000 + fold)
        c_in = (frng.random(len(hard)) < 0.6).astype(np.uint8)
        c_out = (frng.random(len(hard)) < 0.35).astype(np.uint8)
        write_tensor(out / f"fold{fold}_in.spt", c_in)
        write_tensor(out / f"fold{fold}_out.spt", c_out)
        folds.append(
            {
                "fold": fold,
                "hard_ids": [int(i) for i in np.sort(hard)],
                "correct_in": f"fold{fold}_in.spt",
                "correct_out": f"fold{fold}_out.spt",
            }
        )
    (out / "folds.json").write_text(json.dumps({"folds": folds}, indent=2, sort_keys=True))
    return manifest_path
