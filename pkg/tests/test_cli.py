import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from space_erase.cli import main
from space_erase.harness import ConceptSpec, save_concepts
from space_erase.storage import LayerTensor, read_bundle, write_dense

TINY = ["--synthetic", "--scale", "0.05", "--seed", "4"]


def test_solve_writes_bundle_and_report(tmp_path, capsys):
    out, rep = tmp_path / "o.bin", tmp_path / "r.json"
    code = main(["solve", *TINY, "--lambda", "0.05", "--iters", "50", "--out", str(out),
                 "--report", str(rep)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["layers"] == 32
    assert len(read_bundle(out)) == 32
    doc = json.loads(rep.read_text())
    assert doc["iterations"] == 50 and len(doc["storage"]["layers"]) == 32


def test_solve_forced_csr(tmp_path):
    out = tmp_path / "o.bin"
    assert main(["solve", *TINY, "--iters", "5", "--out", str(out), "--format", "csr"]) == 0
    assert out.read_bytes()[:4] == b"SPCR"


def test_sweep_csv(tmp_path):
    out, rep = tmp_path / "s.csv", tmp_path / "s.json"
    code = main(["sweep", *TINY, "--lambda-grid", "0,0.05", "--iter-grid", "10,20",
                 "--metrics", "sparsity,deployment_bytes", "--out", str(out), "--report", str(rep)])
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["lambda", "iterations", "sparsity", "deployment_bytes"]
    assert [r[:2] for r in rows[1:]] == [["0.0", "10"], ["0.0", "20"], ["0.05", "10"], ["0.05", "20"]]
    assert json.loads(rep.read_text())["header"] == rows[0]


def test_compare(tmp_path, capsys):
    rep = tmp_path / "c.json"
    assert main(["compare", *TINY, "--iters", "20", "--lambda", "0.1", "--report", str(rep)]) == 0
    assert len(json.loads(rep.read_text())["layers"]) == 32


def test_analyze(tmp_path, capsys):
    W = np.zeros((3, 4), np.float32)
    W[0, 0] = 1
    write_dense([LayerTensor("a", "mid", "K", W)], tmp_path / "b")
    assert main(["analyze", str(tmp_path / "b"), "--csv", str(tmp_path / "r.csv"),
                 "--report", str(tmp_path / "r.json")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["global_sparsity"] == pytest.approx(11 / 12)
    assert (tmp_path / "r.csv").read_text().startswith("name,block,kind")


def test_file_inputs(tmp_path):
    bundle = [LayerTensor("mid.0.attn2.to_k", "mid", "K",
                          np.random.default_rng(0).standard_normal((6, 5)).astype(np.float32))]
    write_dense(bundle, tmp_path / "in")
    save_concepts(tmp_path / "c.npz", ConceptSpec(m=5).generate())
    assert main(["solve", "--input", str(tmp_path / "in"), "--concepts", str(tmp_path / "c.npz"),
                 "--iters", "10", "--out", str(tmp_path / "o")]) == 0
    # synthetic concepts inferred from the bundle width
    assert main(["solve", "--input", str(tmp_path / "in"), "--iters", "10"]) == 0


def test_validation_error_exit_code(tmp_path):
    assert main(["solve", *TINY, "--lambda", "-1"]) == 1
    assert main(["analyze", str(tmp_path / "missing")]) == 1
    (tmp_path / "junk").write_bytes(b"garbage!garbage!")
    assert main(["analyze", str(tmp_path / "junk")]) == 1
    assert main(["sweep", *TINY, "--lambda-grid", "0.2,0.1"]) == 1


def test_numerical_error_exit_code(tmp_path):
    # a vanishing anchor weight leaves the closed-form system numerically singular
    bundle = [LayerTensor("mid.0.attn2.to_k", "mid", "K", np.ones((2, 3), np.float32))]
    write_dense(bundle, tmp_path / "in")
    np.savez(tmp_path / "c.npz", erase=np.ones((3, 1)), guide=np.ones((3, 1)))
    assert main(["compare", "--input", str(tmp_path / "in"), "--concepts", str(tmp_path / "c.npz"),
                 "--iters", "1", "--lambda2", "1e-20"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "space_erase", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    assert "solve" in res.stdout and "analyze" in res.stdout
