"""サブコマンドと CLI のテスト"""

import logging

import pytest

import run
from src.commands import cmd_validate
from src.core import flops as flops_model
from src.storage.checkpoint import block_from_checkpoint, load_checkpoint
from src.storage.config import TrainConfig
from src.storage.reports import read_csv
from src.training.block import WeightTarget, adapted_targets


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def test_validate_passes_on_correct_implementation(tmp_path, capsys):
    assert cmd_validate(TrainConfig(), tmp_path) == 0
    out = capsys.readouterr().out
    assert "✗" not in out

    rows = read_csv(tmp_path / "validate.csv")
    assert [r["property"] for r in rows][:2] == ["merge_equivalence", "hut_gradients"]
    assert all(r["passed"] == "true" for r in rows)

    delta = {(int(r["d"]), int(r["r"])): int(r["delta_flops"]) for r in read_csv(tmp_path / "delta_flops.csv")}
    assert delta[(4, 2)] == 0
    assert delta[(4, 4)] == 48
    assert delta[(4, 1)] == -24


def test_validate_fails_on_injected_flops_bug(tmp_path, monkeypatch, capsys):
    original = flops_model.flops_hut
    monkeypatch.setattr(flops_model, "flops_hut", lambda N, d, k, r: original(N, d, k, r) + 1)
    assert cmd_validate(TrainConfig(), tmp_path) == 1
    out = capsys.readouterr().out
    assert "flops_exactness" in out.split("失敗した項目")[-1]


def test_cli_flops(tmp_path):
    assert run.main(["flops", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "flops.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "method,N,d,k,r,theoretical,measured"
    # 既定グリッド: N 2 通り × (d, k) 9 通り × r 3 通り × 3 手法
    assert len(lines) == 1 + 2 * 9 * 3 * 3
    assert (tmp_path / "hut-peft.log").exists()


def test_cli_train_is_reproducible(tmp_path):
    args = ["train", "--steps", "3", "--seed", "5", "--targets", "Wq,Wv", "--rank", "2"]
    assert run.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert run.main(args + ["--out", str(tmp_path / "b")]) == 0

    for name in ("loss.csv", "summary.csv", "checkpoint.hutckpt"):
        a = (tmp_path / "a" / "train" / name).read_bytes()
        b = (tmp_path / "b" / "train" / name).read_bytes()
        assert a == b, name

    assert len(read_csv(tmp_path / "a" / "train" / "loss.csv")) == 3
    summary = read_csv(tmp_path / "a" / "train" / "summary.csv")[0]
    assert summary["method"] == "HUT"
    assert summary["rank"] == "2"

    ckpt = load_checkpoint(tmp_path / "a" / "train" / "checkpoint.hutckpt")
    assert ckpt.seed == 5
    assert ckpt.config["rank"] == 2
    assert adapted_targets(block_from_checkpoint(ckpt)) == [WeightTarget.WQ, WeightTarget.WV]
    assert "Wq.MA" in ckpt.tensors and "base.Wq" in ckpt.tensors


def test_cli_sweep_targets(tmp_path):
    assert run.main(["sweep", "targets", "--steps", "0", "--jobs", "2", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep_targets.csv")
    assert [r["index"] for r in rows] == [str(i) for i in range(8)]
    counts = [int(r["num_trainable"]) for r in rows]
    assert max(counts) <= 1.1 * min(counts)
    assert [int(r["reference_rank"]) for r in rows] == [16, 16, 16, 16, 8, 8, 4, 2]


def test_cli_rejects_unknown_sweep_kind(tmp_path):
    with pytest.raises(SystemExit) as e:
        run.main(["sweep", "bogus", "--out", str(tmp_path)])
    assert e.value.code == 2


def test_cli_bad_config_returns_one(tmp_path, capsys):
    path = tmp_path / "config.yaml"
    path.write_text("steps: -1\nmethod: adapter\n", encoding="utf-8")
    assert run.main(["train", "--config", str(path), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "steps" in err and "method" in err
    assert run.main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 1


def test_cli_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("HUT_OUT_DIR", str(tmp_path / "env"))
    assert run.main(["flops"]) == 0
    assert (tmp_path / "env" / "flops.csv").exists()
