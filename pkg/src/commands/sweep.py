"""
sweep サブコマンド
targets: 学習パラメータ数を揃えた 8 構成の比較
rank:    重み集合 × ランクの格子
"""

import logging
from pathlib import Path
from typing import List

from ..storage.config import TrainConfig
from ..storage.reports import write_sweep_csv
from ..training.models import SweepRow
from ..training.tasks import build_task
from ..training.trainer import RANK_SWEEP_SETS, sweep_rank, sweep_targets

logger = logging.getLogger(__name__)

SWEEP_KINDS = ("targets", "rank")


def cmd_sweep(kind: str, config: TrainConfig, out_dir: Path) -> List[SweepRow]:
    """
    スイープを実行して CSV を書き出す

    Args:
        kind: "targets" または "rank"
        config: 基本設定（method / 学習ハイパーパラメータ / タスク / jobs / sweep_ranks）
        out_dir: 出力ディレクトリ

    Returns:
        設定キー順に並んだ行

    Raises:
        ValueError: 未知の kind
    """
    if kind not in SWEEP_KINDS:
        raise ValueError(f"unknown sweep kind: {kind!r} (expected one of {', '.join(SWEEP_KINDS)})")

    method = config.method_enum
    hyper = config.hyper()

    if kind == "targets":
        task = build_task(config.task())
        rows = sweep_targets(task.base, task, method, hyper, config.seed, jobs=config.jobs)
        path = out_dir / "sweep_targets.csv"
    else:
        # r = max(sweep_ranks) を許容できるようモデル次元を引き上げる
        model_dim = max(config.model_dim, max(config.sweep_ranks))
        if model_dim != config.model_dim:
            logger.info(f"Raising model_dim {config.model_dim} -> {model_dim} for the rank sweep")
        task = build_task(config.task(model_dim=model_dim))
        rows = sweep_rank(
            task.base,
            task,
            method,
            hyper,
            config.seed,
            target_sets=RANK_SWEEP_SETS,
            ranks=sorted(set(config.sweep_ranks)),
            jobs=config.jobs,
        )
        path = out_dir / "sweep_rank.csv"

    write_sweep_csv(path, rows)
    for row in rows:
        logger.info(
            f"  • {row.label:<12} r={row.rank:<3} params={row.num_trainable:<6} "
            f"loss {row.initial_loss:.6g} -> {row.final_loss:.6g}, metric={row.eval_metric:.6g}"
        )
    return rows
