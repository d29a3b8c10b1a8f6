"""学習: トイ Transformer ブロック、合成タスク、AdamW、スイープ"""

from .block import ToyBlock, WeightTarget, block_forward, targets_label
from .models import HyperParams, SweepRow, TrainRun
from .optim import AdamWState, adamw_step, lr_factor
from .tasks import PerturbKind, SyntheticTask, TaskData, TaskKind, build_task
from .trainer import (
    RANK_SWEEP_RANKS,
    RANK_SWEEP_SETS,
    TARGET_SWEEP,
    budget_matched_ranks,
    evaluate,
    finetune,
    sweep_rank,
    sweep_targets,
)

__all__ = [
    "ToyBlock",
    "WeightTarget",
    "block_forward",
    "targets_label",
    "HyperParams",
    "SweepRow",
    "TrainRun",
    "AdamWState",
    "adamw_step",
    "lr_factor",
    "PerturbKind",
    "SyntheticTask",
    "TaskData",
    "TaskKind",
    "build_task",
    "RANK_SWEEP_RANKS",
    "RANK_SWEEP_SETS",
    "TARGET_SWEEP",
    "budget_matched_ranks",
    "evaluate",
    "finetune",
    "sweep_rank",
    "sweep_targets",
]
