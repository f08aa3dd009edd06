import numpy as np
import pytest
from scipy.stats import spearmanr

from rundiag import load_run
from rundiag.hardness import aum, composite, el2n, forgetting_score, learning_speed
from rundiag.perturb import FrequencyBand, suppress_band
from rundiag.synth import (
    band_lattice_point,
    gen_calibrated_predictor,
    gen_gaussian_classes,
    gen_manifold,
    gen_spectral_image,
    gen_training_dynamics,
    write_synth_bundle,
)
from rundiag.uncertainty import auroc, smooth_ece


def test_generators_bit_reproducible():
    a = gen_manifold(3, 10, 100, seed=5)
    b = gen_manifold(3, 10, 100, seed=5)
    np.testing.assert_array_equal(a, b)
    la, za, ca = gen_training_dynamics(20, 6, np.zeros(20, int), 0.1, seed=5)
    lb, zb, cb = gen_training_dynamics(20, 6, np.zeros(20, int), 0.1, seed=5)
    np.testing.assert_array_equal(za, zb)
    np.testing.assert_array_equal(la, lb)


def test_manifold_rank_matches_intrinsic_dim():
    for d in (1, 4, 10):
        x = gen_manifold(d, 10, 300, seed=1)
        sv = np.linalg.svd(x - x.mean(axis=0), compute_uv=False)
        rank = int((sv > sv[0] * 1e-9).sum())
        assert rank == d


def test_manifold_noise_fills_ambient():
    x = gen_manifold(2, 8, 300, noise=0.1, seed=2)
    sv = np.linalg.svd(x - x.mean(axis=0), compute_uv=False)
    assert (sv > sv[0] * 1e-9).sum() == 8


def test_dynamics_flip_free_traces_never_forget():
    rng = np.random.default_rng(3)
    lt = rng.integers(1, 9, 50)
    _, _, correct = gen_training_dynamics(50, 8, lt, flip_rate=0.0, seed=3)
    assert forgetting_score(correct).max() == 0
    # naive recount of the planted pattern (checkpoints numbered 1..T)
    for i in range(50):
        np.testing.assert_array_equal(correct[i], np.arange(1, 9) >= lt[i])


def test_dynamics_learned_from_start_have_full_speed():
    # learn time 1 everywhere: correct at every checkpoint
    _, _, correct = gen_training_dynamics(30, 10, np.ones(30, int), 0.0, seed=4)
    np.testing.assert_allclose(learning_speed(correct), 1.0)


def test_dynamics_logits_encode_correctness():
    labels, logits, correct = gen_training_dynamics(40, 6, np.full(40, 3), 0.0, seed=5)
    from rundiag import correctness_matrix

    derived = correctness_matrix(logits, labels)
    np.testing.assert_array_equal(derived, correct)


def test_dynamics_composite_tracks_learn_times():
    rng = np.random.default_rng(6)
    lt = rng.integers(1, 13, 2000)
    labels, logits, correct = gen_training_dynamics(2000, 10, lt, 0.05, seed=6)
    raw = {
        "learning_speed": learning_speed(correct),
        "forgetting": forgetting_score(correct).astype(float),
        "aum": aum(logits, labels),
        "el2n": el2n(logits, labels),
    }
    rho = spearmanr(composite(raw).composite, lt).statistic
    assert rho > 0.9


def test_calibrated_identity_reliability():
    p, correct = gen_calibrated_predictor(100_000, seed=7)
    assert smooth_ece(p, correct) < 0.01


def test_calibrated_constant_reliability_analytic():
    p, correct = gen_calibrated_predictor(100_000, reliability=lambda q: np.ones_like(q), seed=8)
    assert correct.all()
    # small pinned bandwidth: the smoothed residual tracks the analytic 1 - p
    assert smooth_ece(p, correct, bandwidth=0.02) == pytest.approx(np.mean(1.0 - p), abs=0.01)


def test_calibrated_offset_reliability():
    p, correct = gen_calibrated_predictor(
        100_000, reliability=lambda q: np.clip(q - 0.2, 0, 1), seed=9
    )
    assert smooth_ece(p, correct) == pytest.approx(0.2, abs=0.02)


def test_spectral_variance_equals_band_energies():
    energies = {1.75: 0.2, 7.0: 0.5, 28.0: 0.3}
    img, placements = gen_spectral_image(128, 128, energies, seed=10)
    assert abs(img.var() - 1.0) < 1e-6  # pixel variance re-derived, matches energy sum
    for center, (fy, fx) in placements.items():
        band = FrequencyBand(center)
        assert band.lo <= np.hypot(fy, fx) < band.hi


def test_spectral_empty_spectrum_is_zero():
    img, _ = gen_spectral_image(64, 64, {7.0: 0.0}, seed=11)
    np.testing.assert_array_equal(img, 0.0)


def test_spectral_energy_removed_by_matching_band():
    img, _ = gen_spectral_image(128, 128, {28.0: 1.0}, seed=12)
    out = suppress_band(img, FrequencyBand(28.0))
    assert np.max(np.abs(out - out.mean())) < 1e-6


def test_band_lattice_points_integer_and_in_band():
    for center in (1.75, 3.5, 7.0, 14.0, 28.0, 56.0, 112.0):
        fy, fx = band_lattice_point(FrequencyBand(center), 256)
        r = np.hypot(fy, fx)
        assert FrequencyBand(center).lo <= r < FrequencyBand(center).hi


def test_gaussian_classes_mean_recovery():
    g = gen_gaussian_classes(2, 16, separation=10.0, N=4000, seed=13)
    for c in range(2):
        est = g.features[g.labels == c].mean(axis=0)
        per_class = (g.labels == c).sum()
        assert np.max(np.abs(est - g.means[c])) < 4.0 / np.sqrt(per_class)
    d = np.linalg.norm(g.means[0] - g.means[1])
    assert d == pytest.approx(10.0, rel=1e-9)


def test_gaussian_classes_zero_separation_uninformative():
    from rundiag.hardness import prototypicality

    g = gen_gaussian_classes(2, 8, separation=0.0, N=3000, seed=14)
    scores = prototypicality(g.features, g.labels)
    assert abs(auroc(scores, g.labels == 1) - 0.5) < 0.05


def test_gaussian_classes_ood_distance():
    g = gen_gaussian_classes(2, 16, separation=10.0, N=100, seed=15, ood_distance=50.0)
    center = g.ood.mean(axis=0)
    for c in range(2):
        assert np.linalg.norm(center - g.means[c]) == pytest.approx(50.0, rel=0.05)


def test_bundle_loads_and_revalidates(tmp_path):
    manifest = write_synth_bundle(tmp_path / "b", preset="smoke", seed=3)
    run = load_run(manifest)
    assert run.num_samples == 120
    assert run.images is not None and run.masks is not None
    assert run.activations.shape == run.gradients.shape
    # bit-reproducible given (preset, seed)
    write_synth_bundle(tmp_path / "c", preset="smoke", seed=3)
    for f in sorted((tmp_path / "b").iterdir()):
        assert f.read_bytes() == (tmp_path / "c" / f.name).read_bytes(), f.name
