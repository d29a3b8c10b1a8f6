"""設定ファイル読み込みのテスト"""

import pytest

from src.core.errors import ConfigError
from src.core.models import Method
from src.storage.config import TrainConfig, build_config, load_config, resolve_out_dir
from src.training.block import WeightTarget
from src.training.tasks import TaskKind


def test_defaults():
    config = build_config({})
    assert config == TrainConfig()
    assert config.method_enum is Method.HUT
    assert config.target_list == (WeightTarget.WQ, WeightTarget.WV)
    assert config.resolved_rank == 8
    assert config.hyper().steps == 500
    assert config.task().kind is TaskKind.REGRESSION


def test_classification_default_rank():
    assert build_config({"task_kind": "classification"}).resolved_rank == 4
    assert build_config({"task_kind": "classification", "rank": 2}).resolved_rank == 2


def test_yaml_file_and_flag_overrides(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("method: lora\nrank: 4\nsteps: 20\ntargets: [Wq, Wk]\nlr: 0.05\n", encoding="utf-8")
    config = load_config(str(path), {"steps": 7, "lr": None, "targets": "Wv,Wo"})
    assert config.method_enum is Method.LORA
    assert config.rank == 4
    assert config.steps == 7
    assert config.lr == 0.05
    assert config.target_list == (WeightTarget.WV, WeightTarget.WO)


def test_ints_accepted_for_floats():
    assert build_config({"lr": 1}).lr == 1.0


def test_all_problems_are_reported():
    with pytest.raises(ConfigError) as e:
        build_config({"method": "adapter", "steps": -1, "lora_scale": 0.5, "targets": "Wx"})
    message = str(e.value)
    for key in ("method", "steps", "lora_scale", "targets"):
        assert key in message


def test_unknown_key_and_bad_type():
    with pytest.raises(ConfigError) as e:
        build_config({"learning_rate": 0.1, "steps": "many"})
    assert "learning_rate" in str(e.value)
    assert "steps" in str(e.value)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("steps: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(scalar))


def test_out_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv("HUT_OUT_DIR", raising=False)
    assert str(resolve_out_dir(None)) == "out"
    monkeypatch.setenv("HUT_OUT_DIR", str(tmp_path / "env"))
    assert resolve_out_dir(None) == tmp_path / "env"
    assert resolve_out_dir(str(tmp_path / "flag")) == tmp_path / "flag"


def test_snapshot_is_plain_data():
    snapshot = TrainConfig().snapshot()
    assert snapshot["targets"] == ["Wq", "Wv"]
    assert snapshot["rank"] is None
    assert list(snapshot)[0] == "method"
