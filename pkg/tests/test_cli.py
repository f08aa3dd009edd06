import json
from pathlib import Path

import numpy as np
import pytest

from rundiag import cli, write_tensor


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    rc = cli.run(["synth", "--out", str(out), "--preset", "smoke", "--seed", "0"])
    assert rc == 0
    return out


def _texts(outdir):
    return {
        p.name: p.read_bytes()
        for p in sorted(Path(outdir).iterdir())
        if p.suffix in (".csv", ".json", ".spt") and p.name != "provenance.json"
    }


def test_hardness_csv_has_one_row_per_sample(bundle, tmp_path):
    rc = cli.run(["hardness", "--manifest", str(bundle / "manifest.json"), "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "hardness.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 120
    assert lines[0].startswith("sample_id,") and lines[0].endswith(",composite")
    meta = json.loads((tmp_path / "hardness.json").read_text())
    assert set(meta["metrics"]) == {
        "learning_speed", "forgetting", "aum", "el2n",
        "prediction_depth", "vog", "prototypicality",
    }


def test_missing_manifest_exit_code_and_reason(tmp_path, capsys):
    rc = cli.run(["hardness", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert "manifest not found" in err and "nope.json" in err


def test_unknown_flag_exits_two(bundle, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.run(["hardness", "--manifest", str(bundle / "manifest.json"),
                 "--out", str(tmp_path), "--bogus"])
    assert exc.value.code == 2


def test_degenerate_sensitivity_exits_three(tmp_path, capsys):
    clean = np.array([[0.5, 0.5], [0.2, 0.8]], dtype=np.float32)
    write_tensor(tmp_path / "clean.spt", clean)
    index = {"clean": "clean.spt", "perturbed": {}}
    for name in ("freq_7", "shape_a1"):
        write_tensor(tmp_path / f"{name}.spt", clean)
        index["perturbed"][name] = f"{name}.spt"
    (tmp_path / "scores.json").write_text(json.dumps(index))
    rc = cli.run(["sensitivity", "--scores", str(tmp_path / "scores.json"),
                  "--out", str(tmp_path / "out")])
    assert rc == 3
    doc = json.loads((tmp_path / "out" / "sensitivity.json").read_text())
    assert doc["frequency_degenerate"] and doc["hvs_degenerate"]


def test_rerun_by_byte_identical_and_thread_invariant(bundle, tmp_path):
    m = str(bundle / "manifest.json")
    out = tmp_path / "a"
    argv = ["saliency", "--manifest", m, "--out", str(out), "--emit-maps"]
    assert cli.run(argv + ["--threads", "1"]) == 0
    first = _texts(out)
    first_prov = (out / "provenance.json").read_bytes()
    # identical config including --out: every byte, provenance included
    assert cli.run(argv + ["--threads", "1"]) == 0
    assert _texts(out) == first
    assert (out / "provenance.json").read_bytes() == first_prov
    # different thread count: analysis outputs identical (provenance echoes
    # the thread flag, so it is the one file allowed to differ)
    assert cli.run(argv + ["--threads", "8"]) == 0
    assert _texts(out) == first


def test_sensitivity_thread_invariance(bundle, tmp_path):
    s = str(bundle / "scores.json")
    outs = {}
    for tag, threads in (("t1", "1"), ("t8", "8")):
        out = tmp_path / tag
        assert cli.run(["sensitivity", "--scores", s, "--out", str(out),
                        "--threads", threads]) == 0
        outs[tag] = _texts(out)
    assert outs["t1"] == outs["t8"]


def test_provenance_written_with_config_echo(bundle, tmp_path):
    m = str(bundle / "manifest.json")
    assert cli.run(["dims", "--manifest", m, "--out", str(tmp_path)]) == 0
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert prov["engine"] == "rundiag"
    assert prov["subcommand"] == "dims"
    assert prov["config"]["manifest"] == m
    assert len(prov["config_sha256"]) == 64
    assert "dims.csv" in prov["outputs"]


def test_memorize_outputs(bundle, tmp_path):
    assert cli.run(["memorize", "--folds", str(bundle / "folds.json"),
                    "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "memorize.json").read_text())
    assert doc["num_folds"] == 3
    assert "hard-subset" in doc["scope"]
    assert -1.0 <= doc["mt_hard"] <= 1.0


def test_similarity_outputs(bundle, tmp_path):
    m = str(bundle / "manifest.json")
    assert cli.run(["similarity", "--manifest", m, "--out", str(tmp_path),
                    "--other", m]) == 0
    doc = json.loads((tmp_path / "similarity.json").read_text())
    assert doc["cohens_kappa"] == pytest.approx(1.0)  # same run against itself
    assert doc["inter_cka_last_layer"] == pytest.approx(1.0, abs=1e-9)
    assert (tmp_path / "cka_matrix.spt").is_file()
    assert (tmp_path / "displacement.csv").is_file()
    assert (tmp_path / "kernel_tv.csv").is_file()


def test_uq_outputs(bundle, tmp_path):
    m = str(bundle / "manifest.json")
    assert cli.run(["uq", "--manifest", m, "--out", str(tmp_path), "--q-max", "20"]) == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert set(doc["alignment_scores"]) == {
        "ash_energy", "dml", "rp_gradnorm", "mahalanobis", "gda",
        "knn", "cosine", "nnguide", "vim",
    }
    assert 0.0 <= doc["smece"] <= 1.0
    assert (tmp_path / "abstention.csv").is_file()
    assert (tmp_path / "eu_vim.spt").is_file()


def test_report_merges_outputs(bundle, tmp_path):
    m = str(bundle / "manifest.json")
    merged = tmp_path / "merged"
    merged.mkdir()
    assert cli.run(["sensitivity", "--scores", str(bundle / "scores.json"),
                    "--out", str(merged)]) == 0
    assert cli.run(["similarity", "--manifest", m, "--out", str(merged)]) == 0
    rep = tmp_path / "rep"
    assert cli.run(["report", "--run", str(merged), "--out", str(rep)]) == 0
    assert (rep / "report.md").is_file()
    assert (rep / "sensitivity_bars.svg").is_file()
    assert (rep / "cka_heatmap.svg").is_file()
