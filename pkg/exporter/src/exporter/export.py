"""Train small models on synthetic two-modality data and write telemetry.

The exporter is a consumer of the engine's published interfaces: tensor files
and manifests are written through ``rundiag``'s library API, the cue
manipulations applied to eval tiles are the engine's own, and the hardness
composite used to pick the memorization subset comes from the ``rundiag``
CLI. Each job produces two bundles (train and eval splits) plus the
sensitivity scores index and, optionally, memorization fold files.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from rundiag import apply_manipulation, load_run, manipulation_names, standardize, write_tensor
from rundiag.memorization import select_hard_subset

from .data import make_dataset
from .model import SmallConvNet

_JOB_KEYS = {
    "modality",
    "num_train",
    "num_eval",
    "tile",
    "channels",
    "num_checkpoints",
    "checkpoint_stride",
    "seed",
    "memorization_folds",
    "learning_rate",
    "batch_size",
}


@dataclass(frozen=True)
class ExportJob:
    modality: str = "ir_like"
    num_train: int = 512
    num_eval: int = 256
    tile: int = 64
    channels: int = 6
    num_checkpoints: int = 5
    checkpoint_stride: int = 60
    seed: int = 0
    memorization_folds: int = 0
    learning_rate: float = 2e-3
    batch_size: int = 32


def load_job(path) -> ExportJob:
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - _JOB_KEYS
    if unknown:
        raise ValueError(f"job file '{path}': unknown keys {sorted(unknown)}")
    return ExportJob(**doc)


def _train(x, y, job: ExportJob, seed, exclude=None, on_checkpoint=None):
    """Train a fresh model; optionally drop ``exclude`` sample ids from the pool."""
    torch.manual_seed(seed)
    model = SmallConvNet(x.shape[1])
    opt = torch.optim.AdamW(model.parameters(), lr=job.learning_rate, weight_decay=1e-4)
    gen = torch.Generator().manual_seed(seed)
    pool = torch.arange(len(x))
    if exclude is not None and len(exclude):
        keep = torch.ones(len(x), dtype=torch.bool)
        keep[torch.as_tensor(exclude)] = False
        pool = pool[keep]
    total = job.num_checkpoints * job.checkpoint_stride
    model.train()
    for it in range(1, total + 1):
        idx = pool[torch.randperm(len(pool), generator=gen)[: job.batch_size]]
        xb, yb = x[idx], y[idx]
        if torch.rand((), generator=gen) < 0.5:
            xb = torch.flip(xb, dims=[2])
        if torch.rand((), generator=gen) < 0.5:
            xb = torch.flip(xb, dims=[3])
        loss = F.cross_entropy(model(xb), yb)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if on_checkpoint is not None and it % job.checkpoint_stride == 0:
            model.eval()
            on_checkpoint(model, it // job.checkpoint_stride - 1)
            model.train()
    model.eval()
    return model


@torch.no_grad()
def _logits(model, x, batch=256):
    return torch.cat([model(x[i : i + batch]) for i in range(0, len(x), batch)])


def _write_split_bundle(out, run_id, job, images_nhwc, labels, telemetry):
    """Write one split's manifest plus every tensor it references."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    write_tensor(out / "labels.spt", labels)
    write_tensor(out / "images.spt", images_nhwc)
    write_tensor(out / "masks.spt", telemetry["masks"])
    logit_files = []
    for t, z in enumerate(telemetry["logits"]):
        name = f"logits_t{t}.spt"
        write_tensor(out / name, z)
        logit_files.append(name)
    weight_files = []
    for t, w in enumerate(telemetry["weights"]):
        name = f"weights_t{t}.spt"
        write_tensor(out / name, w)
        weight_files.append(name)
    feature_files = {}
    for layer, feats in enumerate(telemetry["features"], start=1):
        name = f"features_l{layer}.spt"
        write_tensor(out / name, feats)
        feature_files[str(layer)] = name
    write_tensor(out / "grad_magnitudes.spt", telemetry["grad_magnitudes"])
    write_tensor(out / "activations.spt", telemetry["activations"])
    write_tensor(out / "gradients.spt", telemetry["gradients"])
    write_tensor(out / "kernels.spt", telemetry["kernels"])
    write_tensor(out / "head_weights.spt", telemetry["head_weights"])
    write_tensor(out / "head_bias.spt", telemetry["head_bias"])
    counts = np.bincount(labels, minlength=2)
    manifest = {
        "run_id": run_id,
        "num_samples": int(n),
        "num_classes": 2,
        "num_checkpoints": int(job.num_checkpoints),
        "checkpoint_stride": int(job.checkpoint_stride),
        "labels": "labels.spt",
        "logits": logit_files,
        "features": feature_files,
        "class_prior": [float(c) / n for c in counts],
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
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _collect_telemetry(model, x, y, masks):
    feats = [f.numpy().astype(np.float32) for f in model.probe_features(x)]
    acts, grads = model.target_maps(x)
    return {
        "masks": masks,
        "features": feats,
        "activations": acts.numpy().astype(np.float32),
        "gradients": grads.numpy().astype(np.float32),
        "kernels": model.conv1.weight.detach().permute(0, 2, 3, 1).numpy().astype(np.float32),
        "head_weights": model.head.weight.detach().numpy().astype(np.float32),
        "head_bias": model.head.bias.detach().numpy().astype(np.float32),
    }


def _hardness_composite(manifest_path):
    """Composite hardness per train sample, via the engine CLI."""
    with tempfile.TemporaryDirectory() as td:
        subprocess.run(
            ["rundiag", "hardness", "--manifest", str(manifest_path), "--out", td],
            check=True, capture_output=True, text=True,
        )
        lines = (Path(td) / "hardness.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    col = header.index("composite")
    return np.array([float(ln.split(",")[col]) for ln in lines[1:]])


def export(job: ExportJob, out_dir):
    """Run the job and return {"train": manifest_path, "eval": manifest_path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "job.json").write_text(json.dumps(asdict(job), indent=2, sort_keys=True))

    n_total = job.num_train + job.num_eval
    images, labels, masks = make_dataset(
        job.modality, n_total, job.tile, job.channels, seed=job.seed
    )
    images = standardize(images)

    x = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
    y = torch.from_numpy(labels)
    tr = slice(0, job.num_train)
    ev = slice(job.num_train, n_total)

    per_split = {
        "train": {"logits": [], "grad_norms": [], "x": x[tr], "y": y[tr]},
        "eval": {"logits": [], "grad_norms": [], "x": x[ev], "y": y[ev]},
    }
    weights = []

    def on_checkpoint(model, t):
        for split in per_split.values():
            split["logits"].append(_logits(model, split["x"]).numpy().astype(np.float32))
            split["grad_norms"].append(
                model.input_grad_norms(split["x"], split["y"]).numpy().astype(np.float32)
            )
        weights.append(model.flat_weights().numpy().astype(np.float32))

    model = _train(x[tr], y[tr], job, seed=job.seed, on_checkpoint=on_checkpoint)

    manifests = {}
    for name, sl in (("train", tr), ("eval", ev)):
        split = per_split[name]
        telemetry = _collect_telemetry(model, split["x"], split["y"], masks[sl])
        telemetry["logits"] = split["logits"]
        telemetry["grad_magnitudes"] = np.stack(split["grad_norms"], axis=1)
        telemetry["weights"] = weights
        manifests[name] = _write_split_bundle(
            out / name, f"{job.modality}-{name}-{job.seed}", job,
            images[sl], labels[sl], telemetry,
        )
        load_run(manifests[name])  # every emitted bundle must round-trip the loader

    _export_sensitivity_scores(model, out / "eval", images[ev], job)
    if job.memorization_folds > 0:
        _export_memorization(model, x[tr], y[tr], job, manifests["train"], out / "train")
    return manifests


def _export_sensitivity_scores(model, out, eval_images, job):
    """Softmax of the final model on clean and manipulated eval tiles."""
    out = Path(out)
    clean = torch.softmax(
        _logits(model, torch.from_numpy(
            np.ascontiguousarray(eval_images.transpose(0, 3, 1, 2))
        )), dim=1,
    ).numpy().astype(np.float32)
    write_tensor(out / "softmax_clean.spt", clean)
    index = {"clean": "softmax_clean.spt", "perturbed": {}}
    n = eval_images.shape[0]
    for name in manipulation_names():
        batch = np.stack([
            apply_manipulation(eval_images[i], name, seed=job.seed, sample_index=i)
            for i in range(n)
        ]).astype(np.float32)
        z = _logits(model, torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))))
        probs = torch.softmax(z, dim=1).numpy().astype(np.float32)
        fname = f"softmax_{name}.spt"
        write_tensor(out / fname, probs)
        index["perturbed"][name] = fname
    (out / "scores.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def _export_memorization(base_model, x_train, y_train, job, train_manifest, out):
    """Hard-subset fold pairs: retrain without the top-5% hardest samples."""
    out = Path(out)
    composite = _hardness_composite(train_manifest)
    hard = select_hard_subset(composite, fraction=0.05)
    folds = []
    for fold in range(job.memorization_folds):
        seed = job.seed + 1000 * (fold + 1)
        if fold == 0:
            in_model = base_model  # fold 0 reuses the base training run
        else:
            in_model = _train(x_train, y_train, job, seed=seed)
        out_model = _train(x_train, y_train, job, seed=seed, exclude=hard)
        hard_t = torch.as_tensor(np.asarray(hard))
        c_in = (_logits(in_model, x_train[hard_t]).argmax(1) == y_train[hard_t]).numpy()
        c_out = (_logits(out_model, x_train[hard_t]).argmax(1) == y_train[hard_t]).numpy()
        write_tensor(out / f"fold{fold}_in.spt", c_in.astype(np.uint8))
        write_tensor(out / f"fold{fold}_out.spt", c_out.astype(np.uint8))
        folds.append({
            "fold": fold,
            "hard_ids": [int(i) for i in hard],
            "correct_in": f"fold{fold}_in.spt",
            "correct_out": f"fold{fold}_out.spt",
        })
    (out / "folds.json").write_text(json.dumps({"folds": folds}, indent=2, sort_keys=True))
