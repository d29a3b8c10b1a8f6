"""
flops サブコマンド
(N, d, k, r) グリッドで HUT / LoRA / MergedDense の理論値と実測値を CSV に出力する
"""

import logging
from pathlib import Path
from typing import List

from ..core.flops import flops_table
from ..core.models import FlopsReport
from ..storage.config import TrainConfig
from ..storage.reports import write_flops_csv

logger = logging.getLogger(__name__)


def cmd_flops(config: TrainConfig, out_dir: Path) -> List[FlopsReport]:
    """
    FLOPs 表を作成

    Args:
        config: flops_batch / flops_dims / flops_ranks を使用
        out_dir: 出力ディレクトリ

    Returns:
        (method, N, d, k, r) 順のレポート
    """
    logger.info(
        f"FLOPs grid: N={list(config.flops_batch)}, d=k in {list(config.flops_dims)}, "
        f"r={list(config.flops_ranks)}"
    )
    reports = flops_table(config.flops_batch, config.flops_dims, config.flops_ranks, seed=config.seed)
    write_flops_csv(out_dir / "flops.csv", reports)

    mismatches = [r for r in reports if not r.exact]
    if mismatches:
        logger.warning(f"{len(mismatches)} rows differ from the closed form")
    else:
        logger.info(f"All {len(reports)} rows match the closed form")
    return reports
