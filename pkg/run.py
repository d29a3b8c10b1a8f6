#!/usr/bin/env python3
"""
hut-peft メインエントリポイント
HUT / LoRA アダプタの検証・FLOPs 計測・合成タスクでの学習・アブレーションを実行
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.commands import SWEEP_KINDS, cmd_flops, cmd_sweep, cmd_train, cmd_validate
from src.core.errors import HutError
from src.storage.config import load_config, resolve_out_dir

# ログ設定
logger = logging.getLogger(__name__)

LOG_FILE_NAME = "hut-peft.log"


def setup_logging(log_level: str, log_file: Path) -> None:
    """ログ設定"""
    log_file.parent.mkdir(parents=True, exist_ok=True)

    level = getattr(logging, log_level.upper(), logging.INFO)

    # 同一プロセスで複数回呼ばれても出力先を差し替える
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    logging.basicConfig(
        level=level,
        format="[%(asctime)s] %(levelname)s [%(name)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[
            logging.FileHandler(log_file, encoding="utf-8"),
            logging.StreamHandler(sys.stdout),
        ],
    )


def build_parser() -> argparse.ArgumentParser:
    """コマンドライン引数パーサ"""
    parser = argparse.ArgumentParser(
        description="hut-peft: Hadamard Updated Transformation によるパラメータ効率的ファインチューニング実験"
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="設定ファイルパス（YAML、省略時は既定値）")
    common.add_argument("--out", help="出力ディレクトリ（省略時: $HUT_OUT_DIR または ./out）")
    common.add_argument("--seed", type=int, help="乱数シード")
    common.add_argument("--method", choices=["hut", "lora"], help="アダプタ種別")
    common.add_argument("--targets", help="適用する重み（カンマ区切り、例: Wq,Wv）")
    common.add_argument("--rank", type=int, help="ランク r")
    common.add_argument("--steps", type=int, help="学習ステップ数")
    common.add_argument("--lr", type=float, help="学習率")
    common.add_argument("--jobs", type=int, help="スイープの並列ワーカー数")

    sub = parser.add_subparsers(dest="command", metavar="{validate,flops,train,sweep}")
    sub.required = True
    sub.add_parser("validate", parents=[common], help="性質検証スイート（失敗時は終了コード 1）")
    sub.add_parser("flops", parents=[common], help="FLOPs 表を flops.csv に出力")
    sub.add_parser("train", parents=[common], help="合成タスクで 1 回学習")
    sweep = sub.add_parser("sweep", parents=[common], help="アブレーション（targets / rank）")
    sweep.add_argument("kind", choices=SWEEP_KINDS, help="targets: 重み種別比較、rank: ランク比較")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """メイン処理"""
    args = build_parser().parse_args(argv)

    overrides = {
        "seed": args.seed,
        "method": args.method,
        "targets": args.targets,
        "rank": args.rank,
        "steps": args.steps,
        "lr": args.lr,
        "jobs": args.jobs,
    }
    out_dir = resolve_out_dir(args.out)

    try:
        config = load_config(args.config, overrides)
    except HutError as e:
        # ログ設定前なので標準エラーへ
        print(f"error: {e}", file=sys.stderr)
        return 1

    setup_logging(config.log_level, out_dir / LOG_FILE_NAME)

    logger.info("=" * 60)
    logger.info(f"Starting hut-peft {args.command}")
    logger.info("=" * 60)
    logger.info(f"Output directory: {out_dir}")

    try:
        if args.command == "validate":
            status = cmd_validate(config, out_dir)
        elif args.command == "flops":
            cmd_flops(config, out_dir)
            status = 0
        elif args.command == "train":
            cmd_train(config, out_dir)
            status = 0
        else:
            cmd_sweep(args.kind, config, out_dir)
            status = 0
    except KeyboardInterrupt:
        logger.info("\nInterrupted by user")
        return 1
    except HutError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1

    logger.info("=" * 60)
    logger.info(f"hut-peft {args.command} {'completed successfully' if status == 0 else 'failed'}")
    logger.info("=" * 60)
    return status


if __name__ == "__main__":
    sys.exit(main())
