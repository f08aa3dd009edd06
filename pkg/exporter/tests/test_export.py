import json
import subprocess

import numpy as np
import pytest

from exporter import ExportJob, export, load_job, make_dataset


def _rundiag(*argv):
    return subprocess.run(["rundiag", *argv], capture_output=True, text=True)


def test_dataset_shapes_and_determinism():
    a_img, a_lab, a_mask = make_dataset("ir_like", 8, 32, 6, seed=1)
    b_img, b_lab, b_mask = make_dataset("ir_like", 8, 32, 6, seed=1)
    np.testing.assert_array_equal(a_img, b_img)
    np.testing.assert_array_equal(a_lab, b_lab)
    assert a_img.shape == (8, 32, 32, 6)
    assert a_mask.any(axis=(1, 2)).all()  # every tile has a lesion
    with pytest.raises(ValueError):
        make_dataset("hyperspectral", 4, 32, 6, seed=0)


def test_job_file_round_trip(tmp_path):
    path = tmp_path / "job.json"
    path.write_text(json.dumps({"modality": "rgb_like", "tile": 32, "seed": 3}))
    job = load_job(path)
    assert job.modality == "rgb_like" and job.tile == 32 and job.seed == 3
    path.write_text(json.dumps({"modality": "rgb_like", "surprise": 1}))
    with pytest.raises(ValueError, match="unknown keys"):
        load_job(path)


@pytest.fixture(scope="module")
def smoke_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    job = ExportJob(
        modality="ir_like", num_train=192, num_eval=96, tile=32, channels=4,
        num_checkpoints=3, checkpoint_stride=20, seed=0, memorization_folds=1,
    )
    manifests = export(job, out)
    return out, manifests


def test_smoke_bundle_runs_every_engine_subcommand(smoke_bundle, tmp_path):
    out, manifests = smoke_bundle
    train_m = str(manifests["train"])
    eval_m = str(manifests["eval"])
    steps = {
        "hardness": ["hardness", "--manifest", train_m],
        "sensitivity": ["sensitivity", "--scores", str(out / "eval" / "scores.json")],
        "memorize": ["memorize", "--folds", str(out / "train" / "folds.json")],
        "dims": ["dims", "--manifest", eval_m, "--channel-pca", "3"],
        "similarity": ["similarity", "--manifest", eval_m],
        "uq": ["uq", "--manifest", eval_m, "--train-manifest", train_m, "--q-max", "30"],
        "saliency": ["saliency", "--manifest", eval_m],
    }
    merged = tmp_path / "merged"
    merged.mkdir()
    for name, argv in steps.items():
        res = _rundiag(*argv, "--out", str(merged))
        assert res.returncode == 0, f"{name}: {res.stderr}"
    res = _rundiag("report", "--run", str(merged), "--out", str(tmp_path / "report"))
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "report" / "report.md").is_file()


def _profile_and_similarity(out, manifests, tmp_path, tag):
    sdir = tmp_path / f"{tag}-sens"
    res = _rundiag("sensitivity", "--scores", str(out / "eval" / "scores.json"),
                   "--out", str(sdir))
    assert res.returncode == 0, res.stderr
    profile = json.loads((sdir / "sensitivity.json").read_text())
    simdir = tmp_path / f"{tag}-sim"
    res = _rundiag("similarity", "--manifest", str(manifests["eval"]), "--out", str(simdir))
    assert res.returncode == 0, res.stderr
    return profile, json.loads((simdir / "similarity.json").read_text())


def _lsf(freq_shares):
    return freq_shares["freq_1.75"] + freq_shares["freq_3.5"]


def _hsf(freq_shares):
    # the top octaves that exist below Nyquist at this tile size
    return freq_shares["freq_14"] + freq_shares["freq_28"]


@pytest.mark.slow
def test_directional_replication(tmp_path):
    outcomes = {}
    for modality, channels in (("ir_like", 6), ("rgb_like", 3)):
        job = ExportJob(
            modality=modality, num_train=512, num_eval=256, tile=64,
            channels=channels, num_checkpoints=5, checkpoint_stride=60, seed=0,
        )
        out = tmp_path / modality
        manifests = export(job, out)
        outcomes[modality] = _profile_and_similarity(out, manifests, tmp_path, modality)

    ir_prof, ir_sim = outcomes["ir_like"]
    rgb_prof, rgb_sim = outcomes["rgb_like"]

    # spectrally-driven modality: color dominates the HVS response, and the
    # low-frequency octaves beat the high ones
    assert ir_prof["hvs_shares"]["color"] > 0.5
    assert _lsf(ir_prof["frequency_shares"]) > _hsf(ir_prof["frequency_shares"])

    # morphology-driven modality: strictly more high-frequency reliance and a
    # strictly more diverse layer hierarchy
    assert _hsf(rgb_prof["frequency_shares"]) > _hsf(ir_prof["frequency_shares"])
    assert rgb_sim["intra_cka_dispersion"] > ir_sim["intra_cka_dispersion"]
