"""Acceptance gate: each test covers one criterion and prints a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Formula checks compare against independent naive scalar implementations
written here with plain loops; nothing is hard-coded from elsewhere.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from rundiag import cli
from rundiag.geometry import id_2nn, id_lpca, id_mle, twonn_fit
from rundiag.hardness import aum, composite, el2n, forgetting_score, learning_speed, vog
from rundiag.memorization import FoldPair, mt_hard
from rundiag.perturb import FrequencyBand, js_divergence, octave_bands, radial_frequency, suppress_band
from rundiag.saliency import concordance_score
from rundiag.similarity import cka, cohens_kappa, intra_cka_matrix, kernel_total_variation, weight_displacement
from rundiag.synth import gen_calibrated_predictor, gen_gaussian_classes, gen_manifold, gen_training_dynamics
from rundiag.uncertainty import (
    ESTIMATOR_DIRECTIONS,
    EUScore,
    alignment_score,
    auroc,
    energy,
    eu_scores,
    fit_train_stats,
    smooth_ece,
)

RELATIVE = 1e-6
ABSOLUTE = 1e-9


def _report(name, ok, detail=""):
    flag = "PASS" if ok else "FAIL"
    print(f"[{flag}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def _close(a, b):
    return abs(a - b) <= max(ABSOLUTE, RELATIVE * abs(b))


# ------------------------------------------------------- formula-oracle suite


def test_formula_oracle_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []

    def check(tag, got, want):
        if not _close(got, want):
            failures.append(f"{tag}: {got!r} vs {want!r}")

    for i in range(1000):
        c = int(rng.integers(2, 5))
        p = rng.dirichlet(np.ones(c))
        q = rng.dirichlet(np.ones(c))
        m = [(p[j] + q[j]) / 2 for j in range(c)]
        want = 0.5 * sum(p[j] * math.log(p[j] / m[j]) for j in range(c) if p[j] > 0)
        want += 0.5 * sum(q[j] * math.log(q[j] / m[j]) for j in range(c) if q[j] > 0)
        check(f"js[{i}]", js_divergence(p, q), want)

    for i in range(1000):
        t, n, c = int(rng.integers(1, 5)), 3, int(rng.integers(2, 5))
        z = rng.normal(size=(t, n, c))
        y = rng.integers(0, c, n)
        got_aum = aum(z, y)
        got_el2n = el2n(z, y)
        for s in range(n):
            margins, norms = [], []
            for ti in range(t):
                others = [z[ti, s, j] for j in range(c) if j != y[s]]
                margins.append(z[ti, s, y[s]] - max(others))
                exps = [math.exp(v - max(z[ti, s])) for v in z[ti, s]]
                total = sum(exps)
                err = 0.0
                for j in range(c):
                    pj = exps[j] / total - (1.0 if j == y[s] else 0.0)
                    err += pj * pj
                norms.append(math.sqrt(err))
            check(f"aum[{i},{s}]", got_aum[s], sum(margins) / t)
            check(f"el2n[{i},{s}]", got_el2n[s], sum(norms) / t)

    for i in range(1000):
        t = int(rng.integers(2, 9))
        g = rng.normal(size=(1, t))
        mean = sum(g[0]) / t
        want = sum((v - mean) ** 2 for v in g[0]) / t
        check(f"vog[{i}]", vog(g)[0], want)

    kappa_count = 0
    while kappa_count < 1000:
        n = int(rng.integers(4, 24))
        ci = rng.random(n) < rng.random()
        cj = rng.random(n) < rng.random()
        p_i = sum(ci) / n
        p_j = sum(cj) / n
        p_e = p_i * p_j + (1 - p_i) * (1 - p_j)
        if p_e >= 1.0:
            continue
        p_o = sum(1 for a, b in zip(ci, cj) if a == b) / n
        check(f"kappa[{kappa_count}]", cohens_kappa(ci, cj), (p_o - p_e) / (1 - p_e))
        kappa_count += 1

    for i in range(1000):
        kh, kw, cin = int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
        k = rng.normal(size=(1, kh, kw, cin))
        want = 0.0
        for ch in range(cin):
            for a in range(kh):
                for b in range(kw - 1):
                    want += abs(k[0, a, b + 1, ch] - k[0, a, b, ch])
            for a in range(kh - 1):
                for b in range(kw):
                    want += abs(k[0, a + 1, b, ch] - k[0, a, b, ch])
        check(f"tv[{i}]", kernel_total_variation(k)[0], want)

    for i in range(1000):
        p_dim = int(rng.integers(2, 12))
        w = rng.normal(size=(2, p_dim))
        want = math.sqrt(sum((w[1, j] - w[0, j]) ** 2 for j in range(p_dim)))
        check(f"disp[{i}]", weight_displacement(w)[0], want)

    for i in range(1000):
        folds = []
        gaps = []
        for k in range(int(rng.integers(1, 5))):
            n = int(rng.integers(2, 12))
            c_in = rng.random(n) < 0.7
            c_out = rng.random(n) < 0.4
            folds.append(FoldPair(k, np.arange(n), c_in, c_out))
            gaps.append(sum(c_in) / n - sum(c_out) / n)
        check(f"mt[{i}]", mt_hard(folds), sum(gaps) / len(gaps))

    for i in range(1000):
        values = rng.random((8, 8))
        mask = rng.random((8, 8)) < 0.15
        if not mask.any():
            mask[0, 0] = True
        flat = sorted(values.ravel())
        hits = []
        for qq in range(90, 101):
            if qq >= 100:
                sel = values == flat[-1]
            else:
                rank = min(max(math.ceil(qq / 100.0 * 64), 1), 64)
                sel = values > flat[rank - 1]
            hits.append(1.0 if (sel & mask).any() else 0.0)
        check(f"cs[{i}]", concordance_score(values, mask), sum(hits) / 11)

    for i in range(1000):
        pts = rng.normal(size=(12, int(rng.integers(2, 5))))
        got = id_mle(pts, k=6).value
        per_sample = []
        for s in range(12):
            dists = sorted(
                math.sqrt(sum((pts[s, j] - pts[o, j]) ** 2 for j in range(pts.shape[1])))
                for o in range(12)
                if o != s
            )
            acc = sum(math.log(dists[5] / dists[j]) for j in range(5))
            per_sample.append(1.0 / (acc / 5.0))
        check(f"mle[{i}]", got, sum(per_sample) / 12)

    elapsed = time.perf_counter() - t0
    _report(
        "formula-oracle suite (10 ops x 1000 instances, 1e-6 rel / 1e-9 abs)",
        not failures and elapsed < 60.0,
        (failures[0] if failures else "all matched") + f", {elapsed:.1f}s (< 60s)",
    )


# ------------------------------------------------------------- manifold suite

_MANIFOLD_CASES = [(1, 10), (2, 10), (5, 20), (8, 30)]
_manifold_cache = {}


def _manifold_estimates():
    if not _manifold_cache:
        t0 = time.perf_counter()
        for d, D in _MANIFOLD_CASES:
            x = gen_manifold(d, D, 2000, noise=0.0, seed=0)
            _manifold_cache[d] = {
                "lpca": id_lpca(x).value,
                "mle": id_mle(x).value,
                "2nn": id_2nn(x).value,
            }
        _manifold_cache["elapsed"] = time.perf_counter() - t0
    return _manifold_cache


def test_manifold_suite_runtime_budget():
    est = _manifold_estimates()
    _report("manifold suite: runtime < 2 min", est["elapsed"] < 120.0, f"{est['elapsed']:.1f}s")


def test_manifold_lpca_exact():
    est = _manifold_estimates()
    detail = ", ".join(f"d={d}: {est[d]['lpca']:.3f}" for d, _ in _MANIFOLD_CASES)
    _report(
        "manifold suite: LPCA exact",
        all(est[d]["lpca"] == d for d, _ in _MANIFOLD_CASES),
        detail,
    )


def test_manifold_mle_within_one():
    est = _manifold_estimates()
    detail = ", ".join(f"d={d}: {est[d]['mle']:.3f}" for d, _ in _MANIFOLD_CASES)
    _report(
        "manifold suite: MLE within +-1.0",
        all(abs(est[d]["mle"] - d) <= 1.0 for d, _ in _MANIFOLD_CASES),
        detail,
    )


def test_manifold_twonn_within_half():
    est = _manifold_estimates()
    detail = ", ".join(f"d={d}: {est[d]['2nn']:.3f}" for d, _ in _MANIFOLD_CASES)
    _report(
        "manifold suite: 2NN within +-0.5",
        all(abs(est[d]["2nn"] - d) <= 0.5 for d, _ in _MANIFOLD_CASES),
        detail,
    )


def test_manifold_twonn_pareto_fixture():
    rng = np.random.default_rng(7)
    mu = (1.0 - rng.random(2000)) ** (-1.0 / 3.0)
    value = twonn_fit(mu)
    _report("manifold suite: 2NN Pareto fixture +-0.2", abs(value - 3.0) <= 0.2, f"{value:.3f}")


# ------------------------------------------------------------ frequency suite


def test_frequency_suite():
    t0 = time.perf_counter()
    h = 256
    rng = np.random.default_rng(0)
    img = rng.normal(size=(h, h))
    spec = np.fft.fft2(img)
    r = radial_frequency(h, h)
    bands = octave_bands()
    spec[~((r >= bands[0].lo) & (r < bands[-1].hi))] = 0.0
    img = np.fft.ifft2(spec).real
    total = float((img**2).sum())
    removed = sum(
        float((img**2).sum() - (suppress_band(img, b) ** 2).sum()) for b in bands
    )
    parseval_ok = abs(removed - total) / total < 1e-6

    yy, xx = np.meshgrid(np.arange(128), np.arange(128), indexing="ij")
    tone = np.cos(2 * np.pi * 28 * yy / 128 + 0.4)
    gone = suppress_band(tone, FrequencyBand(28.0))
    gone -= gone.mean()
    tone_ok = np.max(np.abs(gone)) < 1e-6

    noise = rng.normal(size=(64, 64))
    once = suppress_band(noise, FrequencyBand(14.0))
    idem_ok = np.max(np.abs(once - suppress_band(once, FrequencyBand(14.0)))) < 1e-6

    elapsed = time.perf_counter() - t0
    _report(
        "frequency suite: Parseval tiling 1e-6, tone suppression < 1e-6, idempotence",
        parseval_ok and tone_ok and idem_ok and elapsed < 30.0,
        f"parseval={parseval_ok}, tone={tone_ok}, idempotent={idem_ok}, {elapsed:.1f}s (< 30s)",
    )


# ----------------------------------------------------------- calibration suite


def _mixed_calibration_fixture(n, seed):
    rng = np.random.default_rng(seed)
    n_good = int(0.7 * n)
    p_good = rng.uniform(0.9, 1.0, n_good)
    y_good = rng.random(n_good) < p_good
    p_bad = rng.uniform(0.6, 0.9, n - n_good)
    y_bad = rng.random(n - n_good) < (p_bad - 0.5)
    return np.concatenate([p_good, p_bad]), np.concatenate([y_good, y_bad])


def test_calibration_suite():
    t0 = time.perf_counter()
    p, correct = gen_calibrated_predictor(100_000, seed=0)
    calibrated = smooth_ece(p, correct)

    n = 10_000
    pc = np.ones(n)
    yc = np.zeros(n, bool)
    yc[: int(0.7 * n)] = True
    constant = smooth_ece(pc, yc)

    pm, ym = _mixed_calibration_fixture(20_000, 1)
    rng = np.random.default_rng(2)
    as_indep = alignment_score(EUScore("noise", rng.normal(size=20_000), +1), pm, ym)
    as_oracle = alignment_score(
        EUScore("oracle", np.abs(ym.astype(float) - pm), +1), pm, ym
    )

    elapsed = time.perf_counter() - t0
    ok = (
        calibrated < 0.01
        and abs(constant - 0.3) <= 0.01
        and abs(as_indep - 1.0) <= 0.05
        and as_oracle < 0.5
        and elapsed < 120.0
    )
    _report(
        "calibration suite: smECE bounds and alignment scores",
        ok,
        f"calibrated={calibrated:.4f}, constant={constant:.4f}, "
        f"AS_indep={as_indep:.3f}, AS_oracle={as_oracle:.3f}, {elapsed:.1f}s (< 120s)",
    )


# -------------------------------------------------------------------- EU suite


def test_eu_suite():
    g = gen_gaussian_classes(2, 16, separation=10.0, N=2000, seed=0)
    stats = fit_train_stats(
        g.features, g.labels, class_prior=g.prior,
        head_weights=g.head_weights, head_bias=g.head_bias,
    )
    eval_feats = np.vstack([g.features[:1000], g.ood])
    eval_logits = eval_feats @ stats.head_weights.T + stats.head_bias
    is_ood = np.zeros(len(eval_feats), bool)
    is_ood[1000:] = True
    scores, skipped = eu_scores(eval_feats, eval_logits, stats)
    aurocs = {s.name: auroc(s.direction * s.values, is_ood) for s in scores}
    directions_ok = all(s.direction == ESTIMATOR_DIRECTIONS[s.name] for s in scores)

    rng = np.random.default_rng(1)
    z = rng.normal(size=(200, 4))
    shift_ok = np.allclose(energy(z + 5.5), energy(z) - 5.5, atol=1e-12)
    feats = g.features[:200]
    logits = feats @ stats.head_weights.T + stats.head_bias
    a = {s.name: s.values for s in eu_scores(feats, logits, stats)[0]}
    b = {s.name: s.values for s in eu_scores(feats, logits + 321.0, stats)[0]}
    gradnorm_ok = np.allclose(a["rp_gradnorm"], b["rp_gradnorm"], atol=1e-9)

    ok = (
        not skipped
        and len(scores) == 9
        and all(v > 0.9 for v in aurocs.values())
        and directions_ok
        and shift_ok
        and gradnorm_ok
    )
    detail = ", ".join(f"{k}={v:.3f}" for k, v in sorted(aurocs.items()))
    _report(
        "EU suite: nine estimators AUROC > 0.9, directions, shift behavior",
        ok,
        detail + f", energy_shift={shift_ok}, gradnorm_shift_invariant={gradnorm_ok}",
    )


# ------------------------------------------------------------------- CKA suite


def test_cka_suite():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(300, 24))
    identity_ok = abs(cka(z, z) - 1.0) < 1e-12
    q, _ = np.linalg.qr(rng.normal(size=(24, 24)))
    invariance = abs(cka(z, 2.7 * (z @ q)) - 1.0)
    null = cka(rng.normal(size=(512, 32)), rng.normal(size=(512, 32)))
    layers = [rng.normal(size=(100, d)) for d in (6, 12, 18)]
    mat = intra_cka_matrix(layers)
    intra_ok = np.allclose(mat, mat.T, atol=1e-12) and np.allclose(np.diag(mat), 1.0)
    ok = identity_ok and invariance < 1e-6 and null < 0.05 and intra_ok
    _report(
        "CKA suite: identity, invariance 1e-6, null < 0.05, intra matrix",
        ok,
        f"invariance_gap={invariance:.2e}, null={null:.4f}",
    )


# ---------------------------------------------------------------- determinism


def _analysis_bytes(outdir):
    return {
        p.name: p.read_bytes()
        for p in sorted(Path(outdir).iterdir())
        if p.suffix in (".csv", ".json", ".spt") and p.name != "provenance.json"
    }


def test_cli_determinism(tmp_path):
    bundle = tmp_path / "bundle"
    assert cli.run(["synth", "--out", str(bundle), "--preset", "smoke", "--seed", "7"]) == 0
    m = str(bundle / "manifest.json")
    results = {}
    ok = True
    for sub, argv in {
        "hardness": ["hardness", "--manifest", m],
        "saliency": ["saliency", "--manifest", m, "--emit-maps"],
        "sensitivity": ["sensitivity", "--scores", str(bundle / "scores.json")],
    }.items():
        out = tmp_path / sub
        assert cli.run(argv + ["--out", str(out), "--threads", "1"]) == 0
        first = _analysis_bytes(out)
        prov = (out / "provenance.json").read_bytes()
        assert cli.run(argv + ["--out", str(out), "--threads", "1"]) == 0
        rerun_same = _analysis_bytes(out) == first and (out / "provenance.json").read_bytes() == prov
        assert cli.run(argv + ["--out", str(out), "--threads", "8"]) == 0
        threads_same = _analysis_bytes(out) == first
        results[sub] = (rerun_same, threads_same)
        ok = ok and rerun_same and threads_same
    _report(
        "determinism: byte-identical outputs on rerun and at threads 1 vs 8",
        ok,
        ", ".join(f"{k}: rerun={a}, threads={b}" for k, (a, b) in results.items()),
    )


# ------------------------------------------------------------ hardness ranking


def test_hardness_ranking():
    rng = np.random.default_rng(11)
    learn_times = rng.integers(1, 13, 2000)
    labels, logits, correct = gen_training_dynamics(
        2000, 10, learn_times, flip_rate=0.05, seed=11
    )
    raw = {
        "learning_speed": learning_speed(correct),
        "forgetting": forgetting_score(correct).astype(float),
        "aum": aum(logits, labels),
        "el2n": el2n(logits, labels),
    }
    rho = spearmanr(composite(raw).composite, learn_times).statistic
    _report("hardness ranking: Spearman(composite, learn_times) > 0.9", rho > 0.9, f"rho={rho:.4f}")
