"""
ファインチューニングとアブレーション用スイープ
アダプタのパラメータのみを AdamW で学習する
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Iterable, List, Sequence, Tuple, TypeVar

import numpy as np

from ..core.models import Method, check_rank
from ..core.tensor import derive_seed
from .block import ToyBlock, WeightTarget, targets_label
from .models import HyperParams, SweepRow, TrainRun
from .optim import AdamWState, adamw_step, lr_factor
from .tasks import TaskData

logger = logging.getLogger(__name__)

T = TypeVar("T")

WQ, WK, WV, WO = WeightTarget.WQ, WeightTarget.WK, WeightTarget.WV, WeightTarget.WO

# 重み種別ごとの比較（学習パラメータ数をほぼ揃えた 8 構成）
TARGET_SWEEP: Tuple[Tuple[Tuple[WeightTarget, ...], int], ...] = (
    ((WQ,), 16),
    ((WK,), 16),
    ((WV,), 16),
    ((WO,), 16),
    ((WQ, WK), 8),
    ((WQ, WV), 8),
    ((WQ, WK, WV), 4),
    ((WQ, WK, WV, WO), 2),
)

RANK_SWEEP_SETS: Tuple[Tuple[WeightTarget, ...], ...] = ((WV,), (WQ, WV), (WQ, WK, WV, WO))
RANK_SWEEP_RANKS: Tuple[int, ...] = (1, 2, 4, 8, 64)
BUDGET_TOLERANCE = 0.10


def adapter_param_count(method: Method, rows: int, cols: int, rank: int) -> int:
    """HUT: d·r + r·k + 2k、LoRA: d·r + r·k"""
    base = rows * rank + rank * cols
    return base + 2 * cols if method is Method.HUT else base


def count_trainable(block: ToyBlock, targets: Iterable[WeightTarget], method: Method, rank: int) -> int:
    return sum(adapter_param_count(method, *block.weights[t].shape, rank) for t in targets)


def nearest_rank(block: ToyBlock, targets: Sequence[WeightTarget], method: Method, budget: int) -> int:
    """学習パラメータ数が budget に最も近いランク（同差なら小さい方）"""
    max_rank = min(min(block.weights[t].shape) for t in targets)
    return min(range(1, max_rank + 1), key=lambda r: (abs(count_trainable(block, targets, method, r) - budget), r))


def budget_matched_ranks(
    block: ToyBlock,
    method: Method,
    sweep: Sequence[Tuple[Sequence[WeightTarget], int]] = TARGET_SWEEP,
    tolerance: float = BUDGET_TOLERANCE,
) -> List[int]:
    """
    全構成の学習パラメータ数が互いに tolerance 以内（最大 ≤ (1+tolerance)·最小）になるランクを選ぶ

    先頭構成のランク r0 を 1 から最大ランクまで動かし、残りの構成は
    count(先頭, r0) に最も近いランクを取る。条件を満たす組のうち r0 が
    基準ランクに最も近いもの（同じなら最大/最小比が小さいもの）を採用する。
    満たす組がなければ最大/最小比が最小の組を返す。

    Returns:
        sweep の順に並んだランク
    """
    anchor_targets, anchor_reference = sweep[0]
    anchor_max = min(min(block.weights[t].shape) for t in anchor_targets)

    best_key = None
    best_ranks: List[int] = []
    for r0 in range(1, anchor_max + 1):
        budget = count_trainable(block, anchor_targets, method, r0)
        ranks = [r0] + [nearest_rank(block, targets, method, budget) for targets, _ in sweep[1:]]
        counts = [count_trainable(block, targets, method, r) for (targets, _), r in zip(sweep, ranks)]
        spread = max(counts) / min(counts)
        distance = abs(r0 - anchor_reference)
        if spread <= 1.0 + tolerance:
            key = (0, distance, spread)
        else:
            key = (1, spread, distance)
        if best_key is None or key < best_key:
            best_key, best_ranks = key, ranks

    if best_key[0] == 1:
        logger.warning(f"No rank choice keeps parameter counts within {tolerance:.0%}; spread {best_key[1]:.3f}")
    for (targets, reference), used in zip(sweep, best_ranks):
        if used != reference:
            logger.info(f"Rank for {targets_label(targets)} adjusted {reference} -> {used}")
    return best_ranks


def train_loss(block: ToyBlock, task: TaskData) -> float:
    out, _ = block.forward_batch(task.train_x)
    loss, _ = task.loss_and_grad(out, task.train_y)
    return loss


def evaluate(block: ToyBlock, task: TaskData) -> Tuple[float, float]:
    """
    評価セットでの (損失, 指標)
    """
    out, _ = block.forward_batch(task.eval_x)
    loss, _ = task.loss_and_grad(out, task.eval_y)
    return loss, task.metric(out, task.eval_y)


def finetune(
    block: ToyBlock,
    task: TaskData,
    method: Method,
    targets: Iterable[WeightTarget],
    rank: int,
    hyper: HyperParams,
    seed: int,
) -> TrainRun:
    """
    アダプタのみを学習する

    Args:
        block: 凍結された事前学習済みブロック（変更されない）
        task: 生成済みタスク
        method: HUT または LoRA
        targets: アダプタを付ける重み（空は不可）
        rank: ランク r
        hyper: ハイパーパラメータ
        seed: アダプタ初期化・ミニバッチ抽出のシード

    Returns:
        TrainRun（学習後のブロックを含む）
    """
    targets = WeightTarget.parse_list(list(targets))
    if not targets:
        raise ValueError("finetune requires at least one weight target")
    for target in targets:
        check_rank(rank, *block.weights[target].shape, target=target.value)

    label = f"{method.value}:{targets_label(targets)}:r{rank}"
    model = block.attach(
        targets,
        method,
        rank,
        noise_std=hyper.noise_std,
        lora_scale=hyper.lora_scale,
        seed=derive_seed(seed, 0),
    )
    run = TrainRun(
        method=method,
        targets=targets,
        rank=rank,
        seed=seed,
        hyper=hyper,
        num_trainable=model.num_trainable,
    )
    run.initial_loss = train_loss(model, task)

    opt = AdamWState(
        lr=hyper.lr,
        weight_decay=hyper.weight_decay,
        beta1=hyper.beta1,
        beta2=hyper.beta2,
        eps=hyper.eps,
    )
    params = model.trainable_parameters()
    n_train = task.train_x.shape[0]
    full_batch = hyper.batch_size <= 0 or hyper.batch_size >= n_train
    rng = np.random.default_rng(derive_seed(seed, 1))
    log_every = max(1, hyper.steps // 10)

    logger.info(f"[{label}] training {run.num_trainable} parameters for {hyper.steps} steps")
    for step in range(hyper.steps):
        if full_batch:
            x, y = task.train_x, task.train_y
        else:
            idx = np.sort(rng.choice(n_train, size=hyper.batch_size, replace=False))
            x, y = task.train_x[idx], task.train_y[idx]

        out, cache = model.forward_batch(x)
        loss, d_out = task.loss_and_grad(out, y)
        grads = model.backward_batch(cache, d_out)

        factor = lr_factor(step, hyper.steps, hyper.warmup_ratio, hyper.lr_schedule)
        params, opt = adamw_step(params, grads, opt, lr_scale=factor)
        model = model.with_parameters(params)

        run.loss_trace.append(loss)
        run.lr_trace.append(hyper.lr * factor)
        if step % log_every == 0 or step == hyper.steps - 1:
            logger.debug(f"[{label}] step {step + 1}/{hyper.steps} loss={loss:.6g} lr={hyper.lr * factor:.3g}")

    run.final_loss = train_loss(model, task)
    run.eval_loss, run.eval_metric = evaluate(model, task)
    run.block = model
    logger.info(f"[{label}] done: {run}")
    return run


def run_parallel(jobs: int, items: Sequence[T], fn: Callable[[T], SweepRow]) -> List[SweepRow]:
    """
    ワーカープールで独立な実行を並列処理し、index 順に並べて返す
    """
    if jobs <= 1:
        return sorted((fn(item) for item in items), key=lambda row: row.index)

    rows: List[SweepRow] = []
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        future_to_item = {executor.submit(fn, item): item for item in items}
        for future in as_completed(future_to_item):
            item = future_to_item[future]
            try:
                rows.append(future.result())
            except Exception as e:
                logger.error(f"Sweep run {item} failed: {e}")
                raise
    return sorted(rows, key=lambda row: row.index)


def sweep_targets(
    block: ToyBlock,
    task: TaskData,
    method: Method,
    hyper: HyperParams,
    seed: int,
    jobs: int = 1,
) -> List[SweepRow]:
    """
    重み種別ごとの比較（8 構成、学習パラメータ数を揃える）

    Returns:
        TARGET_SWEEP の順に並んだ 8 行
    """
    ranks = budget_matched_ranks(block, method)
    configs = [(index, targets, rank, used) for index, ((targets, rank), used) in enumerate(zip(TARGET_SWEEP, ranks))]
    counts = [count_trainable(block, targets, method, used) for _, targets, _, used in configs]

    logger.info(f"Target sweep: {len(configs)} configurations, {min(counts)}-{max(counts)} parameters")

    def run_one(config) -> SweepRow:
        index, targets, reference, used = config
        run = finetune(block, task, method, targets, used, hyper, seed)
        return SweepRow(
            index=index,
            targets=targets,
            rank=used,
            reference_rank=reference,
            num_trainable=run.num_trainable,
            initial_loss=run.initial_loss,
            final_loss=run.final_loss,
            eval_metric=run.eval_metric,
        )

    return run_parallel(jobs, configs, run_one)


def sweep_rank(
    block: ToyBlock,
    task: TaskData,
    method: Method,
    hyper: HyperParams,
    seed: int,
    target_sets: Sequence[Tuple[WeightTarget, ...]] = RANK_SWEEP_SETS,
    ranks: Sequence[int] = RANK_SWEEP_RANKS,
    jobs: int = 1,
) -> List[SweepRow]:
    """
    ランク r を変えた比較（重み集合 × ランクの格子）

    Returns:
        (重み集合, ランク) の順に並んだ len(target_sets)·len(ranks) 行
    """
    for targets in target_sets:
        for rank in ranks:
            for target in targets:
                check_rank(rank, *block.weights[target].shape, target=target.value)

    configs = []
    for set_index, targets in enumerate(target_sets):
        for rank_index, rank in enumerate(ranks):
            configs.append((set_index * len(ranks) + rank_index, tuple(targets), rank))

    logger.info(f"Rank sweep: {len(target_sets)} target sets x {len(ranks)} ranks")

    def run_one(config) -> SweepRow:
        index, targets, rank = config
        run = finetune(block, task, method, targets, rank, hyper, seed)
        return SweepRow(
            index=index,
            targets=targets,
            rank=rank,
            reference_rank=rank,
            num_trainable=run.num_trainable,
            initial_loss=run.initial_loss,
            final_loss=run.final_loss,
            eval_metric=run.eval_metric,
        )

    return run_parallel(jobs, configs, run_one)
