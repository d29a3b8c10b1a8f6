"""
設定ファイル読み込み
フラットなキーの YAML を TrainConfig に変換し、全項目をまとめて検証する
"""

import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from ..core.errors import ConfigError
from ..core.models import Method
from ..training.block import WeightTarget
from ..training.models import HyperParams
from ..training.tasks import PerturbKind, SyntheticTask, TaskKind

logger = logging.getLogger(__name__)

OUT_DIR_ENV = "HUT_OUT_DIR"
DEFAULT_OUT_DIR = "./out"

# タスク種別ごとの既定ランク
DEFAULT_RANK = {TaskKind.REGRESSION: 8, TaskKind.CLASSIFICATION: 4}

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class TrainConfig:
    """実験設定（全コマンド共通）"""

    method: str = "hut"
    targets: Tuple[str, ...] = ("Wq", "Wv")
    rank: Optional[int] = None
    lr: float = 0.01
    weight_decay: float = 0.0
    steps: int = 500
    batch_size: int = 0
    seed: int = 0
    noise_std: float = 0.01
    lora_scale: float = 1.0
    warmup_ratio: float = 0.06
    lr_schedule: str = "linear"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    task_kind: str = "regression"
    task_seed: int = 0
    train_size: int = 64
    eval_size: int = 32
    model_dim: int = 32
    ffn_mult: int = 4
    seq_len: int = 8
    num_classes: int = 4
    perturb_scale: float = 0.3
    perturb_kind: str = "modulation"
    perturb_targets: Tuple[str, ...] = ("Wq", "Wv")
    jobs: int = 1
    log_level: str = "INFO"
    flops_batch: Tuple[int, ...] = (1, 8)
    flops_dims: Tuple[int, ...] = (4, 8, 16)
    flops_ranks: Tuple[int, ...] = (1, 2, 4)
    sweep_ranks: Tuple[int, ...] = (1, 2, 4, 8, 64)

    # ------------------------------------------------------------------
    # 派生値
    # ------------------------------------------------------------------

    @property
    def method_enum(self) -> Method:
        return Method.parse(self.method)

    @property
    def target_list(self) -> Tuple[WeightTarget, ...]:
        return WeightTarget.parse_list(list(self.targets))

    @property
    def resolved_rank(self) -> int:
        """rank 未指定ならタスク種別の既定値"""
        if self.rank is not None:
            return self.rank
        return DEFAULT_RANK[TaskKind(self.task_kind)]

    def hyper(self) -> HyperParams:
        return HyperParams(
            lr=self.lr,
            weight_decay=self.weight_decay,
            steps=self.steps,
            batch_size=self.batch_size,
            noise_std=self.noise_std,
            lora_scale=self.lora_scale,
            warmup_ratio=self.warmup_ratio,
            lr_schedule=self.lr_schedule,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            eps=self.adam_eps,
        )

    def task(self, model_dim: Optional[int] = None) -> SyntheticTask:
        """
        合成タスク仕様

        Args:
            model_dim: モデル次元の上書き（ランクスイープで r=64 を許容するため）
        """
        return SyntheticTask(
            kind=TaskKind(self.task_kind),
            seed=self.task_seed,
            train_size=self.train_size,
            eval_size=self.eval_size,
            model_dim=model_dim if model_dim is not None else self.model_dim,
            seq_len=self.seq_len,
            ffn_mult=self.ffn_mult,
            num_classes=self.num_classes,
            perturb_scale=self.perturb_scale,
            perturb_kind=PerturbKind(self.perturb_kind),
            perturb_targets=WeightTarget.parse_list(list(self.perturb_targets)),
        )

    def snapshot(self) -> Dict[str, Any]:
        """チェックポイント用のキー順固定スナップショット"""
        data = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}


def _field_names() -> List[str]:
    return [f.name for f in fields(TrainConfig)]


def _coerce(name: str, value: Any, default: Any) -> Any:
    """YAML / フラグの値を既定値と同じ型に寄せる"""
    if isinstance(default, tuple) or name == "targets" or name == "perturb_targets":
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {type(value).__name__}")
        return tuple(value)
    if name == "rank":
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer or null, got {value!r}")
        return value
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        return str(value)
    return value


def _validate(config: TrainConfig) -> List[str]:
    problems: List[str] = []

    def check(ok: bool, message: str) -> None:
        if not ok:
            problems.append(message)

    try:
        method = Method.parse(config.method)
        check(method in (Method.HUT, Method.LORA), f"method: must be hut or lora, got {config.method!r}")
    except ValueError:
        problems.append(f"method: must be hut or lora, got {config.method!r}")

    for key in ("targets", "perturb_targets"):
        try:
            parsed = WeightTarget.parse_list(list(getattr(config, key)))
            check(len(parsed) > 0, f"{key}: at least one weight target is required")
        except ValueError as e:
            problems.append(f"{key}: {e}")

    check(config.rank is None or config.rank >= 1, f"rank: must be >= 1, got {config.rank}")
    check(config.rank is None or config.rank <= config.model_dim,
          f"rank: {config.rank} exceeds model_dim {config.model_dim}")
    check(config.lr >= 0, f"lr: must be >= 0, got {config.lr}")
    check(config.weight_decay >= 0, f"weight_decay: must be >= 0, got {config.weight_decay}")
    check(config.steps >= 0, f"steps: must be >= 0, got {config.steps}")
    check(config.batch_size >= 0, f"batch_size: must be >= 0, got {config.batch_size}")
    check(config.noise_std >= 0, f"noise_std: must be >= 0, got {config.noise_std}")
    check(config.lora_scale >= 1, f"lora_scale: must be >= 1, got {config.lora_scale}")
    check(0 <= config.warmup_ratio < 1, f"warmup_ratio: must be in [0, 1), got {config.warmup_ratio}")
    check(config.lr_schedule in ("linear", "constant"),
          f"lr_schedule: must be linear or constant, got {config.lr_schedule!r}")
    check(0 <= config.adam_beta1 < 1, f"adam_beta1: must be in [0, 1), got {config.adam_beta1}")
    check(0 <= config.adam_beta2 < 1, f"adam_beta2: must be in [0, 1), got {config.adam_beta2}")
    check(config.adam_eps >= 0, f"adam_eps: must be >= 0, got {config.adam_eps}")
    check(config.task_kind in [k.value for k in TaskKind],
          f"task_kind: must be regression or classification, got {config.task_kind!r}")
    check(config.perturb_kind in [k.value for k in PerturbKind],
          f"perturb_kind: must be modulation or lowrank, got {config.perturb_kind!r}")
    check(config.train_size >= 1, f"train_size: must be >= 1, got {config.train_size}")
    check(config.eval_size >= 1, f"eval_size: must be >= 1, got {config.eval_size}")
    check(config.model_dim >= 1, f"model_dim: must be >= 1, got {config.model_dim}")
    check(config.ffn_mult >= 1, f"ffn_mult: must be >= 1, got {config.ffn_mult}")
    check(config.seq_len >= 1, f"seq_len: must be >= 1, got {config.seq_len}")
    check(config.num_classes >= 2, f"num_classes: must be >= 2, got {config.num_classes}")
    check(config.perturb_scale >= 0, f"perturb_scale: must be >= 0, got {config.perturb_scale}")
    check(config.jobs >= 1, f"jobs: must be >= 1, got {config.jobs}")
    check(config.log_level.upper() in LOG_LEVELS, f"log_level: unknown level {config.log_level!r}")
    for key in ("flops_batch", "flops_dims", "flops_ranks", "sweep_ranks"):
        values = getattr(config, key)
        check(len(values) > 0, f"{key}: must not be empty")
        check(all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in values),
              f"{key}: all entries must be positive integers, got {list(values)}")
    return problems


def build_config(values: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """
    辞書（+ フラグによる上書き）から TrainConfig を作成

    Args:
        values: 設定ファイルの内容
        overrides: コマンドラインフラグ（None の値は無視、フラグが優先）

    Returns:
        検証済み TrainConfig

    Raises:
        ConfigError: 未知のキー・型違い・範囲外の値（全項目を列挙）
    """
    merged: Dict[str, Any] = dict(values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    defaults = TrainConfig()
    known = set(_field_names())
    problems: List[str] = []
    kwargs: Dict[str, Any] = {}

    for key in sorted(merged):
        if key not in known:
            problems.append(f"{key}: unknown config key")
            continue
        try:
            kwargs[key] = _coerce(key, merged[key], getattr(defaults, key))
        except TypeError as e:
            problems.append(f"{key}: {e}")

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))

    config = replace(defaults, **kwargs)
    problems = _validate(config)
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return config


def load_config(config_path: Optional[str], overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """
    設定ファイル読み込み

    Args:
        config_path: YAML ファイルパス（None なら既定値のみ）
        overrides: コマンドラインフラグ

    Returns:
        TrainConfig
    """
    values: Dict[str, Any] = {}
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                values = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError(
                f"Config file not found: {config_path} (create one from config.yaml.example)"
            )
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse config file: {e}")
        if not isinstance(values, dict):
            raise ConfigError(f"Config file must contain a mapping of keys, got {type(values).__name__}")
        logger.info(f"Loaded config from {config_path}")
    return build_config(values, overrides)


def resolve_out_dir(flag: Optional[str]) -> Path:
    """--out、環境変数 HUT_OUT_DIR、既定値 ./out の順で出力先を決める"""
    return Path(flag or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
