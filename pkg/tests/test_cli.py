import json
import shutil

import pytest

from conftest import SMALL_ARCH
from camorect.cli import RUN_MANIFEST, main


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with a corpus, config and trained leader made through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--count", 10, "--size", 64, 64, "--seed", 7, "--out", root / "corpus") == 0
    cfg = {"corpus": str(root / "corpus"), "resolution": 64, "epochs": 1, "batch_size": 4, "lr": 1e-3,
           "arch": SMALL_ARCH, "tce_mode": None}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert run("train-leader", "--config", root / "cfg.json", "--out", root / "leader") == 0
    return root


def _manifest_lines(d):
    return [json.loads(x) for x in (d / RUN_MANIFEST).read_text().splitlines()]


def test_gen_data_reproducible(ws, tmp_path):
    assert run("gen-data", "--count", 10, "--size", 64, 64, "--seed", 7, "--out", tmp_path / "c") == 0
    a = json.loads((ws / "corpus/manifest.json").read_text())
    b = json.loads((tmp_path / "c/manifest.json").read_text())
    assert [s["files"] for s in a["samples"]] == [s["files"] for s in b["samples"]]
    rec = _manifest_lines(tmp_path / "c")
    assert len(rec) == 1 and rec[0]["command"] == "gen-data" and rec[0]["config"]["seed"] == 7


def test_gen_data_usage_errors(tmp_path, capsys):
    assert run("gen-data", "--count", 0, "--out", tmp_path / "a") == 2
    assert "usage" in capsys.readouterr().err
    assert run("gen-data", "--count", 3, "--size", 130, 130, "--out", tmp_path / "b") == 2
    assert run("gen-data", "--out", tmp_path / "c") == 2


def test_overwrite_policy(ws, tmp_path):
    out = tmp_path / "c"
    assert run("gen-data", "--count", 2, "--size", 64, 64, "--out", out) == 0
    assert run("gen-data", "--count", 2, "--size", 64, 64, "--out", out) == 2
    assert run("gen-data", "--count", 2, "--size", 64, 64, "--out", out, "--force") == 0
    # manifests accumulate, one line per successful command
    assert len(_manifest_lines(out)) == 2


def test_train_leader_outputs(ws, capsys):
    ck = ws / "leader/checkpoint.safetensors"
    assert ck.exists() and (ws / "leader/train_log.jsonl").exists()
    rec = _manifest_lines(ws / "leader")[0]
    assert rec["command"] == "train-leader" and rec["inputs"]["config"]


def test_train_follower(ws, tmp_path, capsys):
    ck = ws / "leader/checkpoint.safetensors"
    assert run("train-follower", "--config", ws / "cfg.json", "--out", tmp_path / "f") == 2
    assert run("train-follower", "--config", ws / "cfg.json", "--leader-ckpt", tmp_path / "x.st",
               "--out", tmp_path / "f") == 2
    capsys.readouterr()
    assert run("train-follower", "--config", ws / "cfg.json", "--leader-ckpt", ck, "--out", tmp_path / "f") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].endswith("checkpoint.safetensors") and out[1].startswith("final_loss ")


def test_bad_config_key(ws, tmp_path, capsys):
    cfg = json.loads((ws / "cfg.json").read_text())
    cfg["learning_rate"] = 0.1
    (tmp_path / "bad.json").write_text(json.dumps(cfg))
    assert run("train-leader", "--config", tmp_path / "bad.json", "--out", tmp_path / "o") == 2
    assert "learning_rate" in capsys.readouterr().err


def test_sample_evaluate_plot(ws, tmp_path, capsys):
    ck = ws / "leader/checkpoint.safetensors"
    assert run("sample", "--ckpt", ck, "--corpus", ws / "corpus", "--hq", "--seed", 3, "--out", tmp_path / "s1") == 0
    assert run("sample", "--ckpt", ck, "--corpus", ws / "corpus", "--hq", "--seed", 3, "--out", tmp_path / "s2") == 0
    p1 = sorted((tmp_path / "s1/predictions").iterdir())
    p2 = sorted((tmp_path / "s2/predictions").iterdir())
    assert [p.name for p in p1] == ["s00008.png", "s00009.png"]
    assert all(a.read_bytes() == b.read_bytes() for a, b in zip(p1, p2))
    assert run("evaluate", "--pred", tmp_path / "s1/predictions", "--corpus", ws / "corpus",
               "--out", tmp_path / "e1") == 0
    # ground-truth masks as predictions score (1, 1, 1, 0)
    gt = tmp_path / "gt"
    gt.mkdir()
    for sid in ("s00008", "s00009"):
        shutil.copy(ws / f"corpus/samples/{sid}/mask.png", gt / f"{sid}.png")
    assert run("evaluate", "--pred", gt, "--corpus", ws / "corpus", "--out", tmp_path / "e2") == 0
    agg = json.loads((tmp_path / "e2/report.json").read_text())["aggregate"]
    assert agg == pytest.approx({"s_alpha": 1, "e_phi": 1, "f_beta_w": 1, "mae": 0}, abs=1e-9)
    assert run("evaluate", "--pred", gt, "--corpus", ws / "corpus", "--out", tmp_path / "e3") == 0
    capsys.readouterr()
    assert run("plot", "--reports", tmp_path / "e1", tmp_path / "e2", tmp_path / "e3/report.json",
               "--out", tmp_path / "plots") == 0
    pngs = sorted(p.name for p in (tmp_path / "plots").glob("*.png"))
    assert pngs == ["e_phi.png", "f_beta_w.png", "mae.png", "s_alpha.png"]


def test_sample_usage_errors(ws, tmp_path):
    ck = ws / "leader/checkpoint.safetensors"
    assert run("sample", "--ckpt", ck, "--corpus", ws / "corpus", "--scale", 3, "--out", tmp_path / "a") == 2
    assert run("sample", "--ckpt", ck, "--corpus", ws / "corpus", "--steps", 101, "--out", tmp_path / "b") == 2
    assert run("sample", "--ckpt", tmp_path / "none", "--corpus", ws / "corpus", "--out", tmp_path / "c") == 2


def test_evaluate_io_errors(ws, tmp_path):
    assert run("evaluate", "--pred", tmp_path / "none", "--corpus", ws / "corpus", "--out", tmp_path / "a") == 1
    (tmp_path / "empty").mkdir()
    assert run("evaluate", "--pred", tmp_path / "empty", "--corpus", ws / "corpus", "--out", tmp_path / "b") == 1
    rep = json.loads((tmp_path / "b/report.json").read_text())
    assert rep["aggregate"] is None and rep["warning"]
    assert run("evaluate", "--pred", tmp_path / "empty", "--corpus", tmp_path / "nocorpus",
               "--out", tmp_path / "c") == 1


def test_ablate(ws, tmp_path):
    ck = ws / "leader/checkpoint.safetensors"
    (tmp_path / "empty.json").write_text("[]")
    assert run("ablate", "--config", ws / "cfg.json", "--matrix", tmp_path / "empty.json",
               "--out", tmp_path / "a0") == 0
    assert len((tmp_path / "a0/table.tsv").read_text().splitlines()) == 1
    rows = [{"name": "base", "rectification": {"cdc_enabled": False, "hdc_enabled": False, "cc_enabled": False}},
            {"name": "cdc", "rectification": {"hdc_enabled": False, "cc_enabled": False}}]
    (tmp_path / "m.json").write_text(json.dumps(rows))
    assert run("ablate", "--config", ws / "cfg.json", "--matrix", tmp_path / "m.json", "--out", tmp_path / "a1") == 2
    assert run("ablate", "--config", ws / "cfg.json", "--matrix", tmp_path / "m.json", "--leader-ckpt", ck,
               "--out", tmp_path / "a1") == 0
    lines = (tmp_path / "a1/table.tsv").read_text().splitlines()
    assert len(lines) == 3 and all(len(x.split("\t")) == 6 for x in lines)
    assert run("plot", "--reports", tmp_path / "a1/table.json", "--out", tmp_path / "p") == 0


def test_cache_env(ws, tmp_path, monkeypatch):
    monkeypatch.setenv("CAMORECT_CACHE", str(ws))
    ck = ws / "leader/checkpoint.safetensors"
    # corpus given by name, resolved inside the cache directory
    assert run("sample", "--ckpt", ck, "--corpus", "corpus", "--hq", "--out", tmp_path / "s") == 0


def test_no_subcommand():
    assert run() == 2
