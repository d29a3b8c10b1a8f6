"""
train サブコマンド
合成タスクで 1 回ファインチューニングし、損失推移・サマリー・チェックポイントを保存する
"""

import logging
from pathlib import Path

from ..storage.checkpoint import checkpoint_from_block, save_checkpoint
from ..storage.config import TrainConfig
from ..storage.reports import write_loss_csv, write_summary_csv
from ..training.models import TrainRun
from ..training.tasks import build_task
from ..training.trainer import finetune

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.hutckpt"


def cmd_train(config: TrainConfig, out_dir: Path) -> TrainRun:
    """
    学習を実行して成果物を書き出す

    出力:
        <out>/train/loss.csv, <out>/train/summary.csv, <out>/train/checkpoint.hutckpt

    Args:
        config: 設定
        out_dir: 出力ディレクトリ

    Returns:
        TrainRun
    """
    task = build_task(config.task())
    run = finetune(
        task.base,
        task,
        config.method_enum,
        config.target_list,
        config.resolved_rank,
        config.hyper(),
        config.seed,
    )

    train_dir = out_dir / "train"
    write_loss_csv(train_dir / "loss.csv", run)
    write_summary_csv(train_dir / "summary.csv", run)

    snapshot = config.snapshot()
    snapshot["rank"] = run.rank
    save_checkpoint(train_dir / CHECKPOINT_NAME, checkpoint_from_block(run.block, snapshot, config.seed))

    metric = "eval_accuracy" if task.task.higher_is_better else "eval_mse"
    logger.info(
        f"{run.method.value} on {'+'.join(t.value for t in run.targets)} r={run.rank}: "
        f"loss {run.initial_loss:.6g} -> {run.final_loss:.6g} "
        f"({run.loss_ratio:.1%}), {metric}={run.eval_metric:.6g}, params={run.num_trainable}"
    )
    return run
