"""インフラ層: 設定ファイル、チェックポイント、CSV レポート"""

from .checkpoint import (
    Checkpoint,
    block_from_checkpoint,
    checkpoint_from_block,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .config import TrainConfig, build_config, load_config, resolve_out_dir
from .reports import (
    read_csv,
    write_csv,
    write_flops_csv,
    write_loss_csv,
    write_summary_csv,
    write_sweep_csv,
)

__all__ = [
    "Checkpoint",
    "block_from_checkpoint",
    "checkpoint_from_block",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "build_config",
    "load_config",
    "resolve_out_dir",
    "read_csv",
    "write_csv",
    "write_flops_csv",
    "write_loss_csv",
    "write_summary_csv",
    "write_sweep_csv",
]
