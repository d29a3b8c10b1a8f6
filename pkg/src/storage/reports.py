"""
CSV レポート出力
行は設定キーでソート済みの順に書き出す（差分比較用に安定した出力）
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

from ..core.models import FlopsReport
from ..training.models import SweepRow, TrainRun

logger = logging.getLogger(__name__)

FLOPS_HEADER = ["method", "N", "d", "k", "r", "theoretical", "measured"]
LOSS_HEADER = ["step", "lr", "loss"]
SUMMARY_HEADER = [
    "method", "targets", "rank", "seed", "steps", "num_trainable",
    "initial_loss", "final_loss", "eval_loss", "eval_metric",
]
SWEEP_HEADER = [
    "index", "targets", "rank", "reference_rank", "num_trainable",
    "initial_loss", "final_loss", "eval_metric",
]
VALIDATE_HEADER = ["property", "passed", "detail"]
DELTA_HEADER = ["d", "r", "delta_flops", "sign"]


def _cell(value: Any) -> Any:
    # float は repr で最短往復表現
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    """
    CSV を書き出す

    Args:
        path: 出力パス（親ディレクトリは作成する）
        header: 列名
        rows: 行（辞書）

    Returns:
        書き出したパス
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(header), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})
            count += 1
    logger.info(f"Wrote {count} rows to {path}")
    return path


def write_flops_csv(path: Union[str, Path], reports: List[FlopsReport]) -> Path:
    ordered = sorted(reports, key=lambda r: (r.method.value, r.N, r.d, r.k, r.r))
    return write_csv(
        path,
        FLOPS_HEADER,
        (
            {"method": r.method.value, "N": r.N, "d": r.d, "k": r.k, "r": r.r,
             "theoretical": r.theoretical, "measured": r.measured}
            for r in ordered
        ),
    )


def write_loss_csv(path: Union[str, Path], run: TrainRun) -> Path:
    return write_csv(
        path,
        LOSS_HEADER,
        (
            {"step": i + 1, "lr": lr, "loss": loss}
            for i, (lr, loss) in enumerate(zip(run.lr_trace, run.loss_trace))
        ),
    )


def write_summary_csv(path: Union[str, Path], run: TrainRun) -> Path:
    row = {
        "method": run.method.value,
        "targets": "+".join(t.value for t in run.targets),
        "rank": run.rank,
        "seed": run.seed,
        "steps": len(run.loss_trace),
        "num_trainable": run.num_trainable,
        "initial_loss": run.initial_loss,
        "final_loss": run.final_loss,
        "eval_loss": run.eval_loss,
        "eval_metric": run.eval_metric,
    }
    return write_csv(path, SUMMARY_HEADER, [row])


def write_sweep_csv(path: Union[str, Path], rows: List[SweepRow]) -> Path:
    ordered = sorted(rows, key=lambda r: r.index)
    return write_csv(
        path,
        SWEEP_HEADER,
        (
            {
                "index": r.index,
                "targets": r.label,
                "rank": r.rank,
                "reference_rank": r.reference_rank,
                "num_trainable": r.num_trainable,
                "initial_loss": r.initial_loss,
                "final_loss": r.final_loss,
                "eval_metric": r.eval_metric,
            }
            for r in ordered
        ),
    )


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
