"""
合成ファインチューニングタスク
事前学習済みブロック（base）と、それを摂動した正解ブロック（oracle）の差を埋める
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from ..core.tensor import DenseMatrix, Gaussian, add, derive_seed, hadamard, matmul, outer, scale, seeded_fill
from .block import ToyBlock, WeightTarget, softmax, targets_label

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class PerturbKind(str, Enum):
    MODULATION = "modulation"  # W ← outer(u, v) ⊙ W
    LOWRANK = "lowrank"  # W ← W + P Q


@dataclass(frozen=True)
class SyntheticTask:
    """合成タスクの仕様（シードに対して決定的）"""

    kind: TaskKind = TaskKind.REGRESSION
    seed: int = 0
    train_size: int = 64
    eval_size: int = 32
    model_dim: int = 32
    seq_len: int = 8
    ffn_mult: int = 4
    num_classes: int = 4
    perturb_scale: float = 0.3
    perturb_kind: PerturbKind = PerturbKind.MODULATION
    perturb_targets: Tuple[WeightTarget, ...] = (WeightTarget.WQ, WeightTarget.WV)

    @property
    def ffn_dim(self) -> int:
        return self.model_dim * self.ffn_mult

    @property
    def higher_is_better(self) -> bool:
        return self.kind is TaskKind.CLASSIFICATION


@dataclass
class TaskData:
    """生成済みタスク（base / oracle ブロックと train / eval データ）"""

    task: SyntheticTask
    base: ToyBlock
    oracle: ToyBlock
    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray
    readout: Optional[np.ndarray] = field(default=None, repr=False)

    def loss_and_grad(self, out: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        損失と出力勾配

        Args:
            out: ブロック出力 (B, L, d)
            y: 回帰なら目標 (B, L, d)、分類ならラベル (B, L)

        Returns:
            (損失, dL/dout)
        """
        if self.task.kind is TaskKind.REGRESSION:
            diff = out - y
            return float(np.mean(diff * diff)), 2.0 * diff / diff.size

        probs = softmax(out @ self.readout)
        onehot = np.eye(self.task.num_classes)[y]
        picked = np.sum(probs * onehot, axis=-1)
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        return loss, ((probs - onehot) / y.size) @ self.readout.T

    def metric(self, out: np.ndarray, y: np.ndarray) -> float:
        """回帰は MSE（小さいほど良い）、分類は正解率"""
        if self.task.kind is TaskKind.REGRESSION:
            return float(np.mean((out - y) ** 2))
        return float(np.mean(np.argmax(out @ self.readout, axis=-1) == y))


def _perturb(weight: DenseMatrix, task: SyntheticTask, seed) -> DenseMatrix:
    rows, cols = weight.shape
    noise = Gaussian(0.0, task.perturb_scale)
    if task.perturb_kind is PerturbKind.MODULATION:
        u = add(DenseMatrix.ones(rows, 1), seeded_fill((rows, 1), noise, derive_seed(seed, 0)))
        v = add(DenseMatrix.ones(1, cols), seeded_fill((1, cols), noise, derive_seed(seed, 1)))
        return hadamard(outer(u, v), weight)
    # 加法的な低ランク摂動（ランク 2）
    p = seeded_fill((rows, 2), Gaussian(0.0, 1.0 / np.sqrt(rows)), derive_seed(seed, 2))
    q = seeded_fill((2, cols), Gaussian(0.0, 1.0), derive_seed(seed, 3))
    return add(weight, scale(matmul(p, q), task.perturb_scale))


def build_task(task: SyntheticTask) -> TaskData:
    """
    タスクを生成

    base を乱数で「事前学習」し、その複製を摂動して oracle とする。

    Args:
        task: タスク仕様

    Returns:
        TaskData
    """
    base = ToyBlock.random(task.model_dim, task.ffn_dim, derive_seed(task.seed, 1))
    weights = dict(base.weights)
    for target in task.perturb_targets:
        index = list(WeightTarget).index(target)
        weights[target] = _perturb(weights[target], task, derive_seed(task.seed, 2, index))
    oracle = replace(base, weights=weights)

    shape = (task.seq_len, task.model_dim)
    rng_train = np.random.default_rng(derive_seed(task.seed, 3))
    rng_eval = np.random.default_rng(derive_seed(task.seed, 4))
    train_x = rng_train.normal(size=(task.train_size,) + shape)
    eval_x = rng_eval.normal(size=(task.eval_size,) + shape)

    train_keys = {s.tobytes() for s in train_x}
    if any(s.tobytes() in train_keys for s in eval_x):
        raise ValueError("train and eval sets overlap")

    oracle_train, _ = oracle.forward_batch(train_x)
    oracle_eval, _ = oracle.forward_batch(eval_x)

    readout = None
    if task.kind is TaskKind.REGRESSION:
        train_y, eval_y = oracle_train, oracle_eval
    else:
        readout = np.random.default_rng(derive_seed(task.seed, 5)).normal(
            0.0, 1.0 / np.sqrt(task.model_dim), size=(task.model_dim, task.num_classes)
        )
        train_y = np.argmax(oracle_train @ readout, axis=-1)
        eval_y = np.argmax(oracle_eval @ readout, axis=-1)

    logger.info(
        f"Built {task.kind.value} task: d={task.model_dim}, L={task.seq_len}, "
        f"train={task.train_size}, eval={task.eval_size}, "
        f"perturbed {targets_label(task.perturb_targets)} ({task.perturb_kind.value}, {task.perturb_scale})"
    )
    return TaskData(
        task=task,
        base=base,
        oracle=oracle,
        train_x=train_x,
        train_y=train_y,
        eval_x=eval_x,
        eval_y=eval_y,
        readout=readout,
    )
