import csv
import json
import os
import subprocess
import sys

import jsonschema
import pytest

from qecbench.bench import SUMMARY_SCHEMA
from qecbench.cli import main
from qecbench.dataset import read_dataset

TINY = ["--pool", "3000", "--val-size", "500", "--eval-size", "500", "--epochs", "1", "--timing-reps", "100"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("QECBENCH_OUT_ROOT", raising=False)
    monkeypatch.delenv("QECBENCH_JOBS", raising=False)
    return tmp_path


def gen(mode, seed, out, pool="5000", p="0.02"):
    return main(["generate", "--distance", "3", "--p", p, "--pool", pool, "--mode", mode,
                 "--seed", str(seed), "--out", out])


def test_usage_errors(workdir, capsys):
    assert main(["generate", "--distance", "3", "--p", "1.5", "--mode", "train", "--seed", "1", "--out", "x"]) == 2
    assert "[0, 1]" in capsys.readouterr().err
    assert main(["nonsense"]) == 2
    assert main(["generate", "--bogus"]) == 2
    assert main(["bench", "--models", "resnet", "--distances", "3", "--ps", "0.1", "--out", "o"]) == 2
    assert not os.path.exists("x")


def test_runtime_failure_exit_1(workdir, capsys):
    assert main(["inspect", "missing.bin"]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "FileNotFoundError" and err["subcommand"] == "inspect"


def test_generate_train_eval_inspect(workdir, capsys):
    assert gen("train", 1, "data/train.bin") == 0
    assert gen("eval", 2, "data/val.bin", pool="800") == 0
    assert gen("eval", 3, "data/test.bin", pool="800") == 0
    manifest = json.loads((workdir / "data/train.bin.manifest.json").read_text())
    assert manifest["subcommand"] == "generate" and manifest["seeds"] == {"data": 1}
    assert set(manifest["outputs"]) == {"train.bin"}

    assert main(["train", "--model", "gcn", "--train", "data/train.bin", "--val", "data/val.bin",
                 "--epochs", "4", "--val-interval", "2", "--out", "run"]) == 0
    for name in ("model.ckpt", "history.json", "manifest.json"):
        assert (workdir / "run" / name).exists()
    hist = json.loads((workdir / "run/history.json").read_text())
    assert hist["epoch"] == [1, 2, 3, 4] and hist["val_epoch"] == [2, 4]

    assert main(["eval", "--ckpt", "run", "--test", "data/test.bin", "--report", "rep.json"]) == 0
    rep = json.loads((workdir / "rep.json").read_text())
    assert 0 <= rep["overall_accuracy"] <= 1 and rep["mean_inference_ms"] > 0
    assert (workdir / "rep.json.manifest.json").exists()

    capsys.readouterr()
    assert main(["inspect", "data/train.bin"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[0])["header"]["record_count"] == len(lines) - 1
    assert main(["inspect", "data/train.bin", "--out", "dump.jsonl"]) == 0
    assert (workdir / "dump.jsonl.manifest.json").exists()


def test_eval_rejects_train_mode(workdir):
    gen("train", 1, "t.bin")
    assert main(["train", "--model", "lookup", "--train", "t.bin", "--out", "lut"]) == 0
    assert main(["eval", "--ckpt", "lut", "--test", "t.bin", "--report", "r.json"]) == 1


def test_reproducible_outputs_and_replay(workdir):
    gen("train", 4, "a.bin")
    gen("train", 4, "b.bin")
    assert (workdir / "a.bin").read_bytes() == (workdir / "b.bin").read_bytes()
    gen("eval", 5, "v.bin", pool="300")
    args = ["train", "--model", "unet", "--train", "a.bin", "--val", "v.bin", "--epochs", "2", "--seed", "3"]
    assert main(args + ["--out", "r1"]) == 0
    assert main(args + ["--out", "r2"]) == 0
    assert (workdir / "r1/model.ckpt").read_bytes() == (workdir / "r2/model.ckpt").read_bytes()
    first = (workdir / "r1/model.ckpt").read_bytes()
    (workdir / "r1/model.ckpt").unlink()
    assert main(["replay", "r1/manifest.json"]) == 0
    assert (workdir / "r1/model.ckpt").read_bytes() == first


def test_out_root_env(workdir, monkeypatch):
    monkeypatch.setenv("QECBENCH_OUT_ROOT", str(workdir / "root"))
    assert gen("eval", 1, "e.bin", pool="10") == 0
    assert (workdir / "root/e.bin").exists()


def test_bench_report_contract(workdir):
    rc = main(["bench", "--models", "cnn,unet", "--distances", "3", "--ps", "0.01", "--seeds", "5",
               *TINY, "--out", "bench"])
    assert rc == 0
    with open(workdir / "bench/results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    summary = json.loads((workdir / "bench/summary.json").read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    pvals = [c["ttest_vs_cnn"] for c in summary["cells"] if c["ttest_vs_cnn"] is not None]
    assert len(pvals) == 1 and [c["architecture"] for c in summary["cells"]][1] == "UNet"
    manifest = json.loads((workdir / "bench/manifest.json").read_text())
    assert manifest["subcommand"] == "bench" and set(manifest["outputs"]) == {"results.csv", "summary.json"}


def test_sweep_depth(workdir, monkeypatch):
    monkeypatch.setenv("QECBENCH_JOBS", "1")
    rc = main(["sweep-depth", "--models", "gcn,gcnii", "--depths", "1,3", "--distance", "3", "--p", "0.01",
               *TINY, "--out", "depth"])
    assert rc == 0
    with open(workdir / "depth/results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["architecture"], r["layers"]) for r in rows] == [("GCN", "1"), ("GCN", "3"), ("GCNII", "1"), ("GCNII", "3")]


def test_gradcheck_command(workdir, capsys):
    assert main(["gradcheck", "--max-coords", "30", "--out", "gc"]) == 0
    assert "passed" in capsys.readouterr().out
    results = json.loads((workdir / "gc/gradcheck.json").read_text())
    assert all(r["passed"] for r in results)
    assert (workdir / "gc/manifest.json").exists()


def test_module_entry_point(workdir):
    out = subprocess.run([sys.executable, "-m", "qecbench", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "qecbench" in out.stdout


def test_generated_file_reads_back(workdir):
    gen("eval", 9, "e.bin", pool="50")
    ds = read_dataset("e.bin")
    assert len(ds) == 50 and ds.seed == 9
