"""Command-line driver.

Subcommands: sensitivity, hardness, memorize, dims, similarity, uq, saliency,
synth, report. Every run writes CSV/JSON outputs plus a provenance record (the
verbatim config, its hash, and the engine version) into --out. Outputs are
byte-deterministic functions of (config, seed, telemetry) at any thread count;
SVG plots from `report` are presentation-only and carry no such guarantee.

Exit codes: 0 success, 2 usage/validation error (single-line reason on
stderr), 3 degenerate input (analysis completed but carries a degenerate
flag).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, perturb, synth
from .errors import DegenerateInputError, RundiagError
from .geometry import id_2nn, id_lpca, id_mle, pca_channel_reduce
from .hardness import DIRECTIONS, profile_from_run
from .memorization import FoldPair, fold_gap, mt_hard
from .saliency import concordance_score, gradcam_pp
from .similarity import cka, cohens_kappa, intra_cka_matrix, kernel_total_variation, weight_displacement
from .telemetry import correctness_matrix, load_run, read_tensor, write_tensor
from .uncertainty import (
    abstention_curve,
    classification_metrics,
    eu_scores,
    fit_train_stats,
    smooth_ece,
    softmax,
)

_METRIC_ORDER = tuple(DIRECTIONS)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _provenance(out_dir, subcommand, args, outputs):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(_jsonable(config), sort_keys=True)
    record = {
        "engine": "rundiag",
        "version": __version__,
        "subcommand": subcommand,
        "config": _jsonable(config),
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "outputs": sorted(outputs),
    }
    _write_json(Path(out_dir) / "provenance.json", record)


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pmap(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # ordered, so reductions are deterministic


# ---------------------------------------------------------------- subcommands


def cmd_synth(args):
    out = _outdir(args)
    manifest = synth.write_synth_bundle(out, preset=args.preset, seed=args.seed)
    _provenance(out, "synth", args, [manifest.name])
    print(manifest)
    return 0


def cmd_hardness(args):
    out = _outdir(args)
    run = load_run(args.manifest)
    profile = profile_from_run(run, k_depth=args.k_depth)
    metrics = [m for m in _METRIC_ORDER if m in profile.raw]
    header = ["sample_id"]
    header += [f"raw_{m}" for m in metrics]
    header += [f"norm_{m}" for m in metrics]
    header.append("composite")
    rows = []
    for i in range(run.num_samples):
        row = [i]
        row += [profile.raw[m][i] for m in metrics]
        row += [profile.normalized[m][i] for m in metrics]
        row.append(profile.composite[i])
        rows.append(row)
    _write_csv(out / "hardness.csv", header, rows)
    _write_json(
        out / "hardness.json",
        {
            "run_id": run.manifest.run_id,
            "metrics": metrics,
            "directions": {m: ("up" if profile.directions[m] > 0 else "down") for m in metrics},
            "degenerate": {m: profile.degenerate[m] for m in metrics},
        },
    )
    _provenance(out, "hardness", args, ["hardness.csv", "hardness.json"])
    return 0


def cmd_sensitivity(args):
    out = _outdir(args)
    index_path = Path(args.scores)
    if not index_path.is_file():
        raise RundiagError(f"scores index not found: {index_path}")
    index = json.loads(index_path.read_text())
    root = index_path.parent
    clean = read_tensor(root / index["clean"]).astype(np.float64)
    names = [n for n in perturb.manipulation_names() if n in index.get("perturbed", {})]
    mats = _pmap(
        lambda n: read_tensor(root / index["perturbed"][n]).astype(np.float64),
        names,
        args.threads,
    )
    profile = perturb.sensitivity_profile(clean, dict(zip(names, mats)))

    rows = []
    for name in names:
        axis = "frequency" if name.startswith("freq_") else "hvs"
        share = profile.frequency_shares.get(name, "")
        rows.append([axis, name, profile.mean_djs[name], share])
    for cue in perturb.HVS_CUES:
        if cue in profile.hvs_totals:
            rows.append(["hvs_total", cue, profile.hvs_totals[cue], profile.hvs_shares[cue]])
    _write_csv(out / "sensitivity.csv", ["axis", "name", "mean_djs", "share"], rows)
    _write_json(
        out / "sensitivity.json",
        {
            "mean_djs": profile.mean_djs,
            "frequency_shares": profile.frequency_shares,
            "hvs_totals": profile.hvs_totals,
            "hvs_shares": profile.hvs_shares,
            "frequency_degenerate": profile.frequency_degenerate,
            "hvs_degenerate": profile.hvs_degenerate,
        },
    )
    _provenance(out, "sensitivity", args, ["sensitivity.csv", "sensitivity.json"])
    return 3 if (profile.frequency_degenerate or profile.hvs_degenerate) else 0


def _load_folds(folds_path):
    path = Path(folds_path)
    if not path.is_file():
        raise RundiagError(f"folds index not found: {path}")
    doc = json.loads(path.read_text())
    root = path.parent
    folds = []
    for entry in doc["folds"]:
        folds.append(
            FoldPair(
                fold=int(entry["fold"]),
                hard_ids=np.asarray(entry["hard_ids"], dtype=np.int64),
                correct_in=read_tensor(root / entry["correct_in"]).astype(bool),
                correct_out=read_tensor(root / entry["correct_out"]).astype(bool),
                test_acc_before=entry.get("test_acc_before"),
                test_acc_after=entry.get("test_acc_after"),
            )
        )
    return folds


def cmd_memorize(args):
    out = _outdir(args)
    folds = _load_folds(args.folds)
    rows = [
        [f.fold, len(f.hard_ids), float(np.mean(f.correct_in)), float(np.mean(f.correct_out)), fold_gap(f)]
        for f in folds
    ]
    value = mt_hard(folds)
    _write_csv(out / "memorize.csv", ["fold", "subset_size", "acc_in", "acc_out", "gap"], rows)
    _write_json(
        out / "memorize.json",
        {
            "mt_hard": value,
            "num_folds": len(folds),
            "scope": "hard-subset approximation (top-hardness samples only)",
        },
    )
    _provenance(out, "memorize", args, ["memorize.csv", "memorize.json"])
    return 0


def cmd_dims(args):
    out = _outdir(args)
    run = load_run(args.manifest)
    layers = sorted(run.features) if not args.layers else [int(x) for x in args.layers.split(",")]
    rows = []
    for layer in layers:
        if layer not in run.features:
            raise RundiagError(f"layer {layer} not present in manifest features")
        feats = run.features[layer]
        estimates = [
            id_lpca(feats, k=args.lpca_k, var_threshold=args.lpca_threshold),
            id_mle(feats, k=args.mle_k),
            id_2nn(feats, discard_fraction=args.twonn_discard),
        ]
        for est in estimates:
            rows.append(
                [
                    layer,
                    est.estimator,
                    est.value,
                    json.dumps(_jsonable(est.params), sort_keys=True).replace(",", ";"),
                    est.excluded,
                    est.degenerate,
                ]
            )
    _write_csv(
        out / "dims.csv", ["layer", "estimator", "value", "params", "excluded", "degenerate"], rows
    )
    summary = {
        "layers": layers,
        "estimates": [
            {"layer": r[0], "estimator": r[1], "value": r[2], "excluded": r[4], "degenerate": r[5]}
            for r in rows
        ],
    }
    outputs = ["dims.csv", "dims.json"]
    if args.channel_pca and run.images is not None:
        n, h, w, c = run.images.shape
        pixels = run.images.reshape(-1, c).astype(np.float64)
        fg = np.abs(pixels).max(axis=1) > args.foreground_threshold
        reduction = pca_channel_reduce(pixels, components=args.channel_pca, fit_mask=fg)
        reduced = reduction.reduced.reshape(n, h, w, args.channel_pca)
        write_tensor(out / "images_pca.spt", reduced)
        summary["channel_pca"] = {
            "components": args.channel_pca,
            "explained_variance": reduction.explained_variance,
            "foreground_pixels": int(fg.sum()),
        }
        outputs.append("images_pca.spt")
    _write_json(out / "dims.json", summary)
    _provenance(out, "dims", args, outputs)
    return 0


def cmd_similarity(args):
    out = _outdir(args)
    run = load_run(args.manifest)
    outputs = []
    summary = {"run_id": run.manifest.run_id}
    if run.features:
        layers = sorted(run.features)
        mat = intra_cka_matrix(
            [run.features[l] for l in layers], minibatch=args.minibatch, seed=args.seed
        )
        write_tensor(out / "cka_matrix.spt", mat)
        _write_csv(
            out / "cka.csv",
            ["layer_i", "layer_j", "cka"],
            [[layers[a], layers[b], mat[a, b]] for a in range(len(layers)) for b in range(len(layers))],
        )
        outputs += ["cka_matrix.spt", "cka.csv"]
        off = mat[~np.eye(len(layers), dtype=bool)]
        summary["intra_cka_mean"] = float(off.mean()) if off.size else 1.0
        summary["intra_cka_dispersion"] = float(off.std()) if off.size else 0.0
    if run.weights is not None:
        disp = weight_displacement(run.weights)
        _write_csv(
            out / "displacement.csv",
            ["step", "frobenius_displacement"],
            [[t + 1, disp[t]] for t in range(len(disp))],
        )
        outputs.append("displacement.csv")
        summary["mean_displacement"] = float(disp.mean())
    if run.kernels is not None:
        tv = kernel_total_variation(run.kernels)
        _write_csv(
            out / "kernel_tv.csv",
            ["kernel", "total_variation"],
            [[k, tv[k]] for k in range(len(tv))],
        )
        outputs.append("kernel_tv.csv")
        summary["mean_kernel_tv"] = float(tv.mean())
    if args.other:
        other = load_run(args.other)
        c_self = correctness_matrix(run.logits[-1], run.labels)[:, 0]
        c_other = correctness_matrix(other.logits[-1], other.labels)[:, 0]
        summary["cohens_kappa"] = cohens_kappa(c_self, c_other)
        if run.features and other.features:
            la, lb = max(run.features), max(other.features)
            summary["inter_cka_last_layer"] = cka(
                run.features[la], other.features[lb], minibatch=args.minibatch, seed=args.seed
            )
        pair_rows = [["cohens_kappa", summary["cohens_kappa"]]]
        if "inter_cka_last_layer" in summary:
            pair_rows.append(["inter_cka_last_layer", summary["inter_cka_last_layer"]])
        _write_csv(out / "pair.csv", ["metric", "value"], pair_rows)
        outputs.append("pair.csv")
    _write_json(out / "similarity.json", summary)
    outputs.append("similarity.json")
    _provenance(out, "similarity", args, outputs)
    return 0


def cmd_uq(args):
    out = _outdir(args)
    run = load_run(args.manifest)
    train = load_run(args.train_manifest) if args.train_manifest else run
    bandwidth = "auto" if args.bandwidth == "auto" else float(args.bandwidth)

    logits = run.logits[-1].astype(np.float64)
    probs = softmax(logits, axis=1)
    confidence = probs.max(axis=1)
    correct = correctness_matrix(logits, run.labels)[:, 0]

    summary = {
        "run_id": run.manifest.run_id,
        "smece": smooth_ece(confidence, correct, bandwidth),
        "metrics": classification_metrics(logits, run.labels, positive_class=args.positive_class),
    }

    outputs = ["summary.json"]
    degenerate = False
    if train.features:
        train_layer = max(train.features)
        eval_layer = max(run.features) if run.features else None
        if eval_layer is None:
            raise RundiagError("uq needs feature telemetry in the eval manifest")
        head_w = train.head_weights if train.head_weights is not None else run.head_weights
        head_b = train.head_bias if train.head_bias is not None else run.head_bias
        stats = fit_train_stats(
            train.features[train_layer],
            train.labels,
            class_prior=train.class_prior,
            head_weights=head_w,
            head_bias=head_b,
            neighbors=args.knn_k,
        )
        scores, skipped = eu_scores(run.features[eval_layer], logits, stats)
        summary["skipped"] = skipped
        summary["alignment_scores"] = {}
        summary["directions"] = {}
        curves = {}
        for s in scores:
            write_tensor(out / f"eu_{s.name}.spt", s.values)
            outputs.append(f"eu_{s.name}.spt")
            summary["directions"][s.name] = "up" if s.direction > 0 else "down"
            try:
                ratios = abstention_curve(s, confidence, correct, q_max=args.q_max, bandwidth=bandwidth)
                curves[s.name] = ratios
                summary["alignment_scores"][s.name] = float(
                    np.trapezoid(ratios, dx=1.0) / args.q_max
                )
            except DegenerateInputError as exc:
                summary["alignment_scores"][s.name] = None
                summary.setdefault("degenerate", {})[s.name] = str(exc)
                degenerate = True
        if curves:
            names = sorted(curves)
            rows = [[q] + [curves[n][q] for n in names] for q in range(args.q_max + 1)]
            _write_csv(out / "abstention.csv", ["q"] + [f"ece_ratio_{n}" for n in names], rows)
            outputs.append("abstention.csv")
    _write_json(out / "summary.json", summary)
    _provenance(out, "uq", args, outputs)
    return 3 if degenerate else 0


def cmd_saliency(args):
    out = _outdir(args)
    run = load_run(args.manifest)
    if run.activations is None:
        raise RundiagError("saliency needs activation/gradient telemetry in the manifest")
    if run.masks is None:
        raise RundiagError("saliency needs ground-truth masks in the manifest")
    h, w = run.masks.shape[1:]
    ids = [int(i) for i in np.flatnonzero(run.labels == args.positive_class)]
    if not ids:
        raise RundiagError(f"no samples of class {args.positive_class} to score")

    def one(i):
        smap = gradcam_pp(run.activations[i], run.gradients[i], (h, w))
        cs = 0.0 if smap.flat else concordance_score(smap, run.masks[i] > 0, args.q_lo, args.q_hi)
        return smap, cs

    results = _pmap(one, ids, args.threads)
    rows = [[i, cs, smap.flat] for i, (smap, cs) in zip(ids, results)]
    rows.append(["aggregate", float(np.mean([cs for _, cs in results])), ""])
    _write_csv(out / "concordance.csv", ["sample_id", "concordance", "flat"], rows)
    outputs = ["concordance.csv", "saliency.json"]
    if args.emit_maps:
        maps = np.stack([smap.values for smap, _ in results])
        write_tensor(out / "saliency_maps.spt", maps)
        outputs.append("saliency_maps.spt")
    all_flat = all(smap.flat for smap, _ in results)
    _write_json(
        out / "saliency.json",
        {
            "run_id": run.manifest.run_id,
            "positive_class": args.positive_class,
            "num_scored": len(ids),
            "dataset_concordance": float(np.mean([cs for _, cs in results])),
            "num_flat": int(sum(smap.flat for smap, _ in results)),
            "all_flat": all_flat,
        },
    )
    _provenance(out, "saliency", args, outputs)
    return 3 if all_flat else 0


def cmd_report(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = _outdir(args)
    run_dir = Path(args.run)
    sections = []
    outputs = ["report.md"]

    sens_path = run_dir / "sensitivity.json"
    if sens_path.is_file():
        sens = json.loads(sens_path.read_text())
        fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
        freq = sens.get("frequency_shares", {})
        if freq:
            names = [n for n in perturb.manipulation_names() if n in freq]
            axes[0].bar(range(len(names)), [freq[n] for n in names])
            axes[0].set_xticks(range(len(names)))
            axes[0].set_xticklabels([n[5:] for n in names], rotation=45)
            axes[0].set_title("frequency-band share of response")
            axes[0].set_ylabel("share of D_JS")
        hvs = sens.get("hvs_shares", {})
        if hvs:
            cues = [c for c in perturb.HVS_CUES if c in hvs]
            axes[1].bar(range(len(cues)), [hvs[c] for c in cues], color="tab:orange")
            axes[1].set_xticks(range(len(cues)))
            axes[1].set_xticklabels(cues)
            axes[1].set_title("HVS-cue share of response")
        fig.tight_layout()
        fig.savefig(out / "sensitivity_bars.svg")
        plt.close(fig)
        outputs.append("sensitivity_bars.svg")
        sections.append(
            "## Cue sensitivity\n\n"
            + "\n".join(f"- {k}: {_fmt(v)}" for k, v in sorted(sens.get("hvs_shares", {}).items()))
            + "\n\n![sensitivity](sensitivity_bars.svg)\n"
        )

    abst_path = run_dir / "abstention.csv"
    if abst_path.is_file():
        lines = abst_path.read_text().strip().splitlines()
        header = lines[0].split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        fig, ax = plt.subplots(figsize=(6, 4))
        for j, name in enumerate(header[1:], start=1):
            ax.plot(data[:, 0], data[:, j], label=name.replace("ece_ratio_", ""))
        ax.axhline(1.0, color="gray", lw=0.8, ls="--")
        ax.set_xlabel("% highest-EU samples rejected")
        ax.set_ylabel("ECE_q / ECE_0")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "abstention_curves.svg")
        plt.close(fig)
        outputs.append("abstention_curves.svg")
        sections.append("## Abstention curves\n\n![abstention](abstention_curves.svg)\n")

    cka_path = run_dir / "cka_matrix.spt"
    if cka_path.is_file():
        mat = read_tensor(cka_path)
        fig, ax = plt.subplots(figsize=(4.5, 4))
        im = ax.imshow(mat, vmin=0, vmax=1, cmap="viridis")
        fig.colorbar(im, ax=ax, label="CKA")
        ax.set_title("intra-model CKA")
        fig.tight_layout()
        fig.savefig(out / "cka_heatmap.svg")
        plt.close(fig)
        outputs.append("cka_heatmap.svg")
        sections.append("## Layer similarity\n\n![cka](cka_heatmap.svg)\n")

    for name in ("hardness.json", "memorize.json", "dims.json", "summary.json", "saliency.json", "similarity.json"):
        p = run_dir / name
        if p.is_file():
            doc = json.loads(p.read_text())
            body = json.dumps(doc, indent=2, sort_keys=True)
            sections.append(f"## {name}\n\n```json\n{body}\n```\n")

    (out / "report.md").write_text("# Run diagnostics report\n\n" + "\n".join(sections) + "\n")
    _provenance(out, "report", args, outputs)
    return 0


# -------------------------------------------------------------------- parser


def build_parser():
    default_threads = int(os.environ.get("RUNDIAG_THREADS", "1"))
    parser = argparse.ArgumentParser(
        prog="rundiag", description="training-run failure diagnostics"
    )
    parser.add_argument("--version", action="version", version=f"rundiag {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="path to the run manifest JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=default_threads)

    p = sub.add_parser("synth", help="write a synthetic telemetry bundle")
    common(p, manifest=False)
    p.add_argument("--preset", default="smoke", choices=sorted(synth.PRESETS))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("hardness", help="per-sample hardness profile and composite")
    common(p)
    p.add_argument("--k-depth", type=int, default=25, help="k for the prediction-depth probe")
    p.set_defaults(func=cmd_hardness)

    p = sub.add_parser("sensitivity", help="D_JS sensitivity profile from softmax tensors")
    common(p, manifest=False)
    p.add_argument("--scores", required=True, help="JSON index of clean/perturbed softmax files")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("memorize", help="hard-subset memorization tendency (MT_H)")
    common(p, manifest=False)
    p.add_argument("--folds", required=True, help="JSON index of per-fold correctness files")
    p.set_defaults(func=cmd_memorize)

    p = sub.add_parser("dims", help="intrinsic-dimension estimates per feature layer")
    common(p)
    p.add_argument("--layers", default="", help="comma-separated layer indices (default: all)")
    p.add_argument("--lpca-k", type=int, default=20)
    p.add_argument("--lpca-threshold", type=float, default=0.95)
    p.add_argument("--mle-k", type=int, default=6)
    p.add_argument("--twonn-discard", type=float, default=0.10)
    p.add_argument("--channel-pca", type=int, default=0, help="also PCA-reduce image channels")
    p.add_argument("--foreground-threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_dims)

    p = sub.add_parser("similarity", help="CKA, kappa, kernel TV, weight displacement")
    common(p)
    p.add_argument("--minibatch", type=int, default=256)
    p.add_argument("--other", default="", help="second manifest for kappa / inter-CKA")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("uq", help="calibration, epistemic uncertainty, abstention")
    common(p)
    p.add_argument("--train-manifest", default="", help="training-fold manifest for fitting stats")
    p.add_argument("--bandwidth", default="auto", help="kernel sigma or 'auto'")
    p.add_argument("--q-max", type=int, default=90)
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--positive-class", type=int, default=1)
    p.set_defaults(func=cmd_uq)

    p = sub.add_parser("saliency", help="saliency maps and mask concordance")
    common(p)
    p.add_argument("--q-lo", type=int, default=90)
    p.add_argument("--q-hi", type=int, default=100)
    p.add_argument("--positive-class", type=int, default=1)
    p.add_argument("--emit-maps", action="store_true")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("report", help="merge prior outputs into a summary + SVG plots")
    common(p, manifest=False)
    p.add_argument("--run", required=True, help="directory holding prior analysis outputs")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DegenerateInputError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return 3
    except RundiagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
